#include "redraw/segharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <utility>

#include "redraw/checkpoint.hpp"
#include "redraw/classic_aug.hpp"
#include "redraw/dataset.hpp"
#include "redraw/optim.hpp"
#include "redraw/parallel.hpp"
#include "redraw/rng.hpp"

namespace redraw::seg {

ConfusionCounts confusion(const img::Mask& pred, const img::Mask& gt) {
  if (!pred.same_dims(gt)) {
    throw SegError("confusion: prediction and ground truth dimensions differ");
  }
  ConfusionCounts c;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    if (pred.values[i]) {
      gt.values[i] ? ++c.tp : ++c.fp;
    } else {
      gt.values[i] ? ++c.fn : ++c.tn;
    }
  }
  return c;
}

MetricsRow metrics(const ConfusionCounts& c) {
  if (c.tp < 0 || c.tn < 0 || c.fp < 0 || c.fn < 0) {
    throw SegError("metrics: negative count");
  }
  bool pred_empty = c.tp + c.fp == 0;
  bool gt_empty = c.tp + c.fn == 0;
  double both_empty = pred_empty && gt_empty ? 1.0 : 0.0;

  MetricsRow r;
  int64_t total = c.total();
  r.accuracy = total == 0 ? 1.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
  r.precision = pred_empty ? both_empty : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  r.recall = gt_empty ? both_empty : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  // P+R can only vanish when positives exist somewhere and none matched, so
  // the 0/0 branch is always the mismatch value.
  r.f1 = r.precision + r.recall == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  r.iou = pred_empty && gt_empty
              ? 1.0
              : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
  return r;
}

namespace {

constexpr int kS0 = 8;
constexpr int kS1 = 16;

Tensor conv_init(Rng& rng, int out_c, int in_c, int k) {
  double sd = std::sqrt(2.0 / (in_c * k * k));
  std::vector<double> w(static_cast<size_t>(out_c) * in_c * k * k);
  for (double& v : w) v = rng.normal() * sd;
  return Tensor::from_data({out_c, in_c, k, k}, std::move(w), true);
}

}  // namespace

SegNet::SegNet(uint64_t seed) {
  Rng rng(derive_seed({seed, 0x736567}));  // net-init stream
  params.add("enc0/w", conv_init(rng, kS0, 3, 3));
  params.add("enc0/b", Tensor::zeros({kS0}, true));
  params.add("enc1/w", conv_init(rng, kS1, kS0, 3));
  params.add("enc1/b", Tensor::zeros({kS1}, true));
  params.add("mid/w", conv_init(rng, kS1, kS1, 3));
  params.add("mid/b", Tensor::zeros({kS1}, true));
  params.add("dec1/w", conv_init(rng, kS0, kS1, 3));
  params.add("dec1/b", Tensor::zeros({kS0}, true));
  params.add("dec0/w", conv_init(rng, kS0, kS0, 3));
  params.add("dec0/b", Tensor::zeros({kS0}, true));
  // Zero head: the untrained net outputs logit 0 everywhere, so the first
  // BCE evaluation sits exactly at ln 2.
  params.add("head/w", Tensor::zeros({1, kS0, 3, 3}, true));
  params.add("head/b", Tensor::zeros({1}, true));
}

Tensor SegNet::logits(const Tensor& x) const {
  Tensor h0 = relu(add_channel_bias(conv2d(x, params.at("enc0/w"), 1, 1), params.at("enc0/b")));
  Tensor h1 = relu(add_channel_bias(conv2d(avg_pool2(h0), params.at("enc1/w"), 1, 1),
                                    params.at("enc1/b")));
  Tensor mid = relu(add_channel_bias(conv2d(avg_pool2(h1), params.at("mid/w"), 1, 1),
                                     params.at("mid/b")));
  Tensor u1 = relu(add_channel_bias(conv2d(add(upsample2(mid), h1), params.at("dec1/w"), 1, 1),
                                    params.at("dec1/b")));
  Tensor u0 = relu(add_channel_bias(conv2d(add(upsample2(u1), h0), params.at("dec0/w"), 1, 1),
                                    params.at("dec0/b")));
  return add_channel_bias(conv2d(u0, params.at("head/w"), 1, 1), params.at("head/b"));
}

Tensor SegNet::forward(const Tensor& x) const { return sigmoid(logits(x)); }

namespace {

struct SegSample {
  img::Image image;
  img::Mask label;
};

std::vector<SegSample> load_seg_set(const std::string& manifest_path, const char* who) {
  std::vector<ManifestRecord> recs = read_manifest(manifest_path);
  if (recs.empty()) throw SegError(std::string(who) + ": empty manifest " + manifest_path);
  std::vector<SegSample> out;
  out.reserve(recs.size());
  for (const ManifestRecord& r : recs) {
    LabeledSample s = load_sample(manifest_path, r);
    if (s.image.channels != 3) throw SegError(std::string(who) + ": expected RGB images");
    if (s.image.height != s.label.height || s.image.width != s.label.width) {
      throw SegError(std::string(who) + ": label dimensions differ from image");
    }
    out.push_back({std::move(s.image), std::move(s.label)});
  }
  for (const SegSample& s : out) {
    if (s.image.height != out.front().image.height ||
        s.image.width != out.front().image.width) {
      throw SegError(std::string(who) + ": mixed image sizes in dataset");
    }
  }
  return out;
}

}  // namespace

LossCurve train_segmenter(SegNet& net, const std::string& manifest_path,
                          const SegTrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch < 1 || !(cfg.lr > 0.0)) {
    throw SegError("train_segmenter: invalid config");
  }
  std::vector<SegSample> data = load_seg_set(manifest_path, "train_segmenter");
  int n = static_cast<int>(data.size());
  int h = data.front().image.height, w = data.front().image.width;
  size_t plane = static_cast<size_t>(h) * w;

  Optimizer opt(net.params, OptKind::Adam, cfg.lr);
  Rng rng(derive_seed({cfg.seed, 0x747261696e}));  // train stream
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  LossCurve curve;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_int(0, i)]);
    }
    double epoch_sum = 0.0;
    for (int pos = 0; pos < n; pos += cfg.batch) {
      int b = std::min(cfg.batch, n - pos);
      std::vector<double> xin(static_cast<size_t>(b) * 3 * plane);
      std::vector<double> yin(static_cast<size_t>(b) * plane);
      for (int i = 0; i < b; ++i) {
        const SegSample& s = data[order[pos + i]];
        std::vector<double> chw = img::to_chw(s.image);
        std::copy(chw.begin(), chw.end(), xin.begin() + static_cast<size_t>(i) * 3 * plane);
        double* yrow = yin.data() + static_cast<size_t>(i) * plane;
        for (size_t j = 0; j < plane; ++j) yrow[j] = s.label.values[j];
      }
      double lv;
      try {
        Tensor z = net.logits(Tensor::from_data({b, 3, h, w}, std::move(xin)));
        Tensor loss = sigmoid_bce(z, Tensor::from_data({b, 1, h, w}, std::move(yin)));
        lv = loss.scalar();
        backward(loss);
      } catch (const TensorError& e) {
        throw SegError("train_segmenter: diverged at epoch " + std::to_string(epoch) +
                       ": " + e.what());
      }
      opt.step();
      net.params.zero_grads();
      epoch_sum += lv * b;
    }
    curve.emplace_back(epoch, epoch_sum / n);
  }

  if (!cfg.checkpoint_path.empty()) save_segmenter(cfg.checkpoint_path, net);
  return curve;
}

void save_segmenter(const std::string& path, const SegNet& net) {
  save_parameters(path, net.params);
}

void load_segmenter(const std::string& path, SegNet& net) {
  if (!load_parameters(path, net.params).empty()) {
    throw SegError("load_segmenter: unexpected extra tensors in " + path);
  }
}

img::Mask predict(const SegNet& net, const img::Image& image) {
  if (image.channels != 3) throw SegError("predict: expected an RGB image");
  NoGradGuard ng;
  Tensor probs =
      net.forward(Tensor::from_data({1, 3, image.height, image.width}, img::to_chw(image)));
  img::Mask out(image.height, image.width);
  const std::vector<double>& v = probs.values();
  for (size_t i = 0; i < v.size(); ++i) out.values[i] = v[i] >= 0.5 ? 1 : 0;
  return out;
}

MetricsRow evaluate_model(const SegNet& net, const std::string& test_manifest_path) {
  std::vector<ManifestRecord> recs = read_manifest(test_manifest_path);
  if (recs.empty()) {
    throw SegError("evaluate_model: empty manifest " + test_manifest_path);
  }
  std::vector<MetricsRow> rows(recs.size());
  par::parallel_for(0, static_cast<int64_t>(recs.size()), [&](int64_t lo, int64_t hi) {
    NoGradGuard ng;  // grad suppression is per-thread
    for (int64_t i = lo; i < hi; ++i) {
      LabeledSample s = load_sample(test_manifest_path, recs[i]);
      rows[i] = metrics(confusion(predict(net, s.image), s.label));
    }
  });
  MetricsRow mean;
  for (const MetricsRow& r : rows) {
    mean.accuracy += r.accuracy;
    mean.precision += r.precision;
    mean.recall += r.recall;
    mean.f1 += r.f1;
    mean.iou += r.iou;
  }
  double n = static_cast<double>(rows.size());
  mean.accuracy /= n;
  mean.precision /= n;
  mean.recall /= n;
  mean.f1 /= n;
  mean.iou /= n;
  return mean;
}

std::vector<MetricsRow> evaluate_table(const std::vector<PolicyModel>& models,
                                       const std::string& test_manifest_path) {
  const std::vector<aug::PolicyKind>& registry = aug::policy_registry();
  std::vector<std::pair<size_t, MetricsRow>> keyed;
  keyed.reserve(models.size());
  for (const PolicyModel& m : models) {
    aug::PolicyKind kind;
    try {
      kind = aug::policy_from_name(m.policy);
    } catch (const std::exception& e) {
      throw SegError("evaluate_table: " + std::string(e.what()));
    }
    SegNet net(0);
    try {
      load_segmenter(m.checkpoint_path, net);
    } catch (const SegError&) {
      throw;
    } catch (const std::exception& e) {
      throw SegError("evaluate_table: missing model for policy '" + m.policy +
                     "': " + e.what());
    }
    MetricsRow row = evaluate_model(net, test_manifest_path);
    row.policy = m.policy;
    size_t order =
        std::find(registry.begin(), registry.end(), kind) - registry.begin();
    keyed.emplace_back(order, std::move(row));
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<MetricsRow> out;
  out.reserve(keyed.size());
  for (auto& [order, row] : keyed) out.push_back(std::move(row));
  return out;
}

namespace {

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream f(path);
  if (!f) throw SegError("write_metrics_csv: cannot open " + path);
  f << "policy,accuracy,precision,recall,f1,miou\n";
  for (const MetricsRow& r : rows) {
    f << r.policy << ',' << fmt9(r.accuracy) << ',' << fmt9(r.precision) << ','
      << fmt9(r.recall) << ',' << fmt9(r.f1) << ',' << fmt9(r.iou) << '\n';
  }
  if (!f.good()) throw SegError("write_metrics_csv: write failed for " + path);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw SegError("read_metrics_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "policy,accuracy,precision,recall,f1,miou") {
    throw SegError("read_metrics_csv: bad header in " + path);
  }
  std::vector<MetricsRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw SegError("read_metrics_csv: bad row in " + path);
    MetricsRow r;
    r.policy = fields[0];
    r.accuracy = std::stod(fields[1]);
    r.precision = std::stod(fields[2]);
    r.recall = std::stod(fields[3]);
    r.f1 = std::stod(fields[4]);
    r.iou = std::stod(fields[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_loss_curve(const std::string& path, const LossCurve& curve) {
  std::ofstream f(path);
  if (!f) throw SegError("write_loss_curve: cannot open " + path);
  f << "step,loss\n";
  for (const auto& [step, loss] : curve) f << step << ',' << fmt9(loss) << '\n';
  if (!f.good()) throw SegError("write_loss_curve: write failed for " + path);
}

}  // namespace redraw::seg
