#include "redraw/diffusion.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

#include "redraw/checkpoint.hpp"
#include "redraw/dataset.hpp"
#include "redraw/optim.hpp"

namespace redraw::diff {

namespace {

void check_t(int t, const NoiseSchedule& sched, const char* who) {
  if (t < 1 || t > sched.T) {
    throw DiffusionError(std::string(who) + ": t=" + std::to_string(t) +
                         " outside schedule of length " + std::to_string(sched.T));
  }
}

void check_pair(const img::Image& a, const img::Image& b, const char* who) {
  if (!a.same_dims(b)) throw DiffusionError(std::string(who) + ": image dimensions differ");
}

void check_mask(const img::Image& a, const img::Mask& m, const char* who) {
  if (a.height != m.height || a.width != m.width) {
    throw DiffusionError(std::string(who) + ": mask dimensions differ from image");
  }
}

}  // namespace

NoiseSchedule schedule_from_betas(std::vector<double> beta) {
  if (beta.empty()) throw DiffusionError("schedule_from_betas: empty beta sequence");
  NoiseSchedule s;
  s.T = static_cast<int>(beta.size());
  s.beta = std::move(beta);
  s.alpha.resize(s.T);
  s.alpha_bar.resize(s.T);
  s.sigma.resize(s.T);
  double prod = 1.0;
  for (int i = 0; i < s.T; ++i) {
    double b = s.beta[i];
    if (!(b > 0.0) || !(b < 1.0)) {
      throw DiffusionError("schedule_from_betas: beta outside (0,1) at t=" + std::to_string(i + 1));
    }
    s.alpha[i] = 1.0 - b;
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
    s.sigma[i] = std::sqrt(b);
  }
  return s;
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw DiffusionError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw DiffusionError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> beta(T);
  for (int t = 1; t <= T; ++t) {
    beta[t - 1] = T == 1 ? beta_start
                         : beta_start + (t - 1) * (beta_end - beta_start) / (T - 1);
  }
  return schedule_from_betas(std::move(beta));
}

void require_near_pure_noise(const NoiseSchedule& sched) {
  if (sched.T < 1) throw DiffusionError("schedule is empty");
  double ab = sched.alpha_bar.back();
  if (!(ab < 0.05)) {
    throw DiffusionError("schedule stops short of noise: alpha_bar_T = " +
                         std::to_string(ab) + " (need < 0.05)");
  }
}

img::Image to_field(const img::Image& x0) {
  img::Image f = x0;
  for (double& v : f.values) v = 2.0 * v - 1.0;
  return f;
}

img::Image from_field(const img::Image& f) {
  img::Image x = f;
  for (double& v : x.values) {
    v = (v + 1.0) * 0.5;
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  return x;
}

img::Image noise_image(int height, int width, int channels, Rng& rng) {
  img::Image n(height, width, channels);
  for (double& v : n.values) v = rng.normal();
  return n;
}

img::Image q_sample(const img::Image& x0, int t, const img::Image& eps,
                    const NoiseSchedule& sched) {
  check_t(t, sched, "q_sample");
  check_pair(x0, eps, "q_sample");
  double ab = sched.alpha_bar[t - 1];
  double a = std::sqrt(ab);
  double b = std::sqrt(1.0 - ab);
  img::Image xt(x0.height, x0.width, x0.channels);
  for (size_t i = 0; i < xt.values.size(); ++i) {
    xt.values[i] = a * (2.0 * x0.values[i] - 1.0) + b * eps.values[i];
  }
  return xt;
}

img::Image masked_q_sample(const img::Image& x0, const img::Mask& m, int t,
                           const img::Image& eps, const NoiseSchedule& sched) {
  check_mask(x0, m, "masked_q_sample");
  return img::compose(q_sample(x0, t, eps, sched), x0, m);
}

// ---- denoiser ----

namespace {

constexpr int kTimeDim = 16;
constexpr int kC0 = 16;
constexpr int kC1 = 32;

Tensor conv_init(Rng& rng, int out_c, int in_c, int k) {
  double sd = std::sqrt(2.0 / (in_c * k * k));
  std::vector<double> w(static_cast<size_t>(out_c) * in_c * k * k);
  for (double& v : w) v = rng.normal() * sd;
  return Tensor::from_data({out_c, in_c, k, k}, std::move(w), true);
}

Tensor dense_init(Rng& rng, int in_d, int out_d) {
  double sd = 1.0 / std::sqrt(static_cast<double>(in_d));
  std::vector<double> w(static_cast<size_t>(in_d) * out_d);
  for (double& v : w) v = rng.normal() * sd;
  return Tensor::from_data({in_d, out_d}, std::move(w), true);
}

// 16 sinusoidal features per sample: sin/cos of t at 8 geometric frequencies.
Tensor time_features(const std::vector<int>& ts) {
  int n = static_cast<int>(ts.size());
  std::vector<double> f(static_cast<size_t>(n) * kTimeDim);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < kTimeDim / 2; ++k) {
      double w = std::pow(10000.0, -static_cast<double>(k) / (kTimeDim / 2));
      f[i * kTimeDim + 2 * k] = std::sin(ts[i] * w);
      f[i * kTimeDim + 2 * k + 1] = std::cos(ts[i] * w);
    }
  }
  return Tensor::from_data({n, kTimeDim}, std::move(f));
}

}  // namespace

DenoiserNet::DenoiserNet(uint64_t seed) {
  Rng rng(derive_seed({seed, 0x6e6574}));  // net-init stream
  params.add("enc0/w", conv_init(rng, kC0, 4, 3));
  params.add("enc0/b", Tensor::zeros({kC0}, true));
  params.add("enc1/w", conv_init(rng, kC1, kC0, 3));
  params.add("enc1/b", Tensor::zeros({kC1}, true));
  params.add("mid/w", conv_init(rng, kC1, kC1, 3));
  params.add("mid/b", Tensor::zeros({kC1}, true));
  params.add("dec1/w", conv_init(rng, kC0, kC1, 3));
  params.add("dec1/b", Tensor::zeros({kC0}, true));
  params.add("dec0/w", conv_init(rng, kC0, kC0, 3));
  params.add("dec0/b", Tensor::zeros({kC0}, true));
  // Zero head: the net starts out predicting zero noise, so the initial
  // loss sits at the variance of eps itself.
  params.add("head/w", Tensor::zeros({3, kC0, 3, 3}, true));
  params.add("head/b", Tensor::zeros({3}, true));
  params.add("time/proj", dense_init(rng, kTimeDim, kTimeDim));
  params.add("time/enc0", dense_init(rng, kTimeDim, kC0));
  params.add("time/enc1", dense_init(rng, kTimeDim, kC1));
  params.add("time/mid", dense_init(rng, kTimeDim, kC1));
  params.add("class/table", dense_init(rng, scenes::kNumClasses, kTimeDim));
  params.add("class/mid", dense_init(rng, kTimeDim, kC1));
}

Tensor DenoiserNet::forward(const Tensor& x, const std::vector<int>& ts,
                            const std::vector<int>& tokens) const {
  if (x.rank() != 4 || x.dim(1) != 4) {
    throw DiffusionError("denoiser: input must be {N,4,H,W}");
  }
  int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (h % 4 != 0 || w % 4 != 0) {
    throw DiffusionError("denoiser: H and W must be divisible by 4");
  }
  if (static_cast<int>(ts.size()) != n || static_cast<int>(tokens.size()) != n) {
    throw DiffusionError("denoiser: need one timestep and one token per sample");
  }
  const ParameterStore& P = params;
  Tensor temb = matmul(time_features(ts), P.at("time/proj"));
  Tensor cemb = embedding(P.at("class/table"), tokens);

  Tensor h0 = silu(add_sample_bias(
      add_channel_bias(conv2d(x, P.at("enc0/w"), 1, 1), P.at("enc0/b")),
      matmul(temb, P.at("time/enc0"))));
  Tensor h1 = silu(add_sample_bias(
      add_channel_bias(conv2d(avg_pool2(h0), P.at("enc1/w"), 1, 1), P.at("enc1/b")),
      matmul(temb, P.at("time/enc1"))));
  Tensor mid = add_sample_bias(
      add_channel_bias(conv2d(avg_pool2(h1), P.at("mid/w"), 1, 1), P.at("mid/b")),
      matmul(temb, P.at("time/mid")));
  mid = silu(add_sample_bias(mid, matmul(cemb, P.at("class/mid"))));
  Tensor u1 = silu(add_channel_bias(
      conv2d(add(upsample2(mid), h1), P.at("dec1/w"), 1, 1), P.at("dec1/b")));
  Tensor u0 = silu(add_channel_bias(
      conv2d(add(upsample2(u1), h0), P.at("dec0/w"), 1, 1), P.at("dec0/b")));
  return add_channel_bias(conv2d(u0, P.at("head/w"), 1, 1), P.at("head/b"));
}

Tensor denoiser_input(const img::Image& x_t, const img::Mask& m) {
  if (x_t.channels != 3) throw DiffusionError("denoiser_input: image must have 3 channels");
  check_mask(x_t, m, "denoiser_input");
  int h = x_t.height, w = x_t.width;
  size_t plane = static_cast<size_t>(h) * w;
  std::vector<double> data(4 * plane);
  std::vector<double> chw = img::to_chw(x_t);
  std::copy(chw.begin(), chw.end(), data.begin());
  for (size_t i = 0; i < plane; ++i) data[3 * plane + i] = m.values[i];
  return Tensor::from_data({1, 4, h, w}, std::move(data));
}

Tensor diffusion_loss(const DenoiserNet& net, const img::Image& x0,
                      const img::Mask& m, ObjectClass token, int t,
                      const img::Image& eps, const NoiseSchedule& sched) {
  int64_t area = img::mask_area(m);
  if (area == 0) throw DiffusionError("diffusion_loss: empty mask");
  img::Image xt = masked_q_sample(x0, m, t, eps, sched);
  Tensor pred = net.forward(denoiser_input(xt, m), {t}, {static_cast<int>(token)});

  int h = x0.height, w = x0.width;
  size_t plane = static_cast<size_t>(h) * w;
  Tensor target = Tensor::from_data({1, 3, h, w}, img::to_chw(eps));
  std::vector<double> m3(3 * plane);
  for (size_t i = 0; i < plane; ++i) {
    m3[i] = m3[plane + i] = m3[2 * plane + i] = m.values[i];
  }
  Tensor mask3 = Tensor::from_data({1, 3, h, w}, std::move(m3));
  return masked_mse(pred, target, mask3, {3.0 * static_cast<double>(area)});
}

// ---- training ----

namespace {

struct TrainSample {
  img::Image image;
  std::vector<img::Mask> masks;
  std::vector<int> tokens;
};

std::vector<TrainSample> load_training_set(const std::string& manifest_path) {
  std::vector<ManifestRecord> records = read_manifest(manifest_path);
  std::string dir = manifest_dir(manifest_path);
  std::vector<TrainSample> out;
  for (const ManifestRecord& rec : records) {
    if (rec.instances.empty()) continue;
    TrainSample s;
    s.image = img::load_ppm(dir + "/" + rec.image);
    for (const ManifestInstance& inst : rec.instances) {
      s.masks.push_back(img::load_pgm(dir + "/" + inst.mask));
      s.tokens.push_back(static_cast<int>(scenes::class_from_name(inst.cls)));
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) {
    throw DiffusionError("train_diffusion: no samples with instances in " + manifest_path);
  }
  for (const TrainSample& s : out) {
    if (!s.image.same_dims(out.front().image)) {
      throw DiffusionError("train_diffusion: mixed image sizes in dataset");
    }
  }
  return out;
}

}  // namespace

LossCurve train_diffusion(DenoiserNet& net, const std::string& manifest_path,
                          const NoiseSchedule& sched,
                          const DiffusionTrainConfig& cfg) {
  if (cfg.batch < 1 || cfg.steps < 0 || !(cfg.lr > 0.0) || cfg.ema < 0.0 ||
      cfg.ema >= 1.0) {
    throw DiffusionError("train_diffusion: invalid config");
  }
  require_near_pure_noise(sched);
  std::vector<TrainSample> data = load_training_set(manifest_path);
  int h = data.front().image.height, w = data.front().image.width;
  size_t plane = static_cast<size_t>(h) * w;

  Optimizer opt(net.params, OptKind::Adam, cfg.lr);
  Rng rng(derive_seed({cfg.seed, 0x747261696e}));  // train stream

  std::vector<std::vector<double>> shadow;
  if (cfg.ema > 0.0) {
    for (const auto& [name, t] : net.params) shadow.emplace_back(t.size(), 0.0);
  }

  LossCurve curve;
  int b = cfg.batch;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<double> xin(static_cast<size_t>(b) * 4 * plane);
    std::vector<double> tgt(static_cast<size_t>(b) * 3 * plane);
    std::vector<double> msk(static_cast<size_t>(b) * 3 * plane);
    std::vector<double> denom(b);
    std::vector<int> ts(b), tokens(b);
    for (int i = 0; i < b; ++i) {
      const TrainSample& s = data[rng.uniform_int(0, static_cast<int>(data.size()) - 1)];
      int inst = rng.uniform_int(0, static_cast<int>(s.masks.size()) - 1);
      const img::Mask& m = s.masks[inst];
      ts[i] = rng.uniform_int(1, sched.T);
      tokens[i] = s.tokens[inst];
      img::Image eps = noise_image(h, w, 3, rng);
      img::Image xt = masked_q_sample(s.image, m, ts[i], eps, sched);

      std::vector<double> chw = img::to_chw(xt);
      std::copy(chw.begin(), chw.end(), xin.begin() + static_cast<size_t>(i) * 4 * plane);
      std::vector<double> echw = img::to_chw(eps);
      std::copy(echw.begin(), echw.end(), tgt.begin() + static_cast<size_t>(i) * 3 * plane);
      double* mrow = msk.data() + static_cast<size_t>(i) * 3 * plane;
      double* xrow = xin.data() + static_cast<size_t>(i) * 4 * plane + 3 * plane;
      for (size_t j = 0; j < plane; ++j) {
        double mv = m.values[j];
        xrow[j] = mv;
        mrow[j] = mrow[plane + j] = mrow[2 * plane + j] = mv;
      }
      denom[i] = 3.0 * static_cast<double>(img::mask_area(m));
    }

    double lv;
    try {
      Tensor pred = net.forward(Tensor::from_data({b, 4, h, w}, std::move(xin)), ts, tokens);
      Tensor loss = masked_mse(pred, Tensor::from_data({b, 3, h, w}, std::move(tgt)),
                               Tensor::from_data({b, 3, h, w}, std::move(msk)), denom);
      lv = loss.scalar();
      backward(loss);
    } catch (const TensorError& e) {
      throw DiffusionError("train_diffusion: diverged at step " + std::to_string(step) +
                           ": " + e.what());
    }
    opt.step();
    net.params.zero_grads();
    if (step == 1 || step % 50 == 0) curve.emplace_back(step, lv);

    if (cfg.ema > 0.0) {
      size_t pi = 0;
      for (auto& [name, t] : net.params) {
        const std::vector<double>& src = t.values();
        std::vector<double>& dst = shadow[pi++];
        for (size_t j = 0; j < dst.size(); ++j) {
          dst[j] = cfg.ema * dst[j] + (1.0 - cfg.ema) * src[j];
        }
      }
    }
  }

  if (cfg.ema > 0.0 && cfg.steps > 0) {
    double correction = 1.0 - std::pow(cfg.ema, cfg.steps);
    size_t pi = 0;
    for (auto& [name, t] : net.params) {
      std::vector<double>& dst = t.mutable_values();
      const std::vector<double>& src = shadow[pi++];
      for (size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] / correction;
    }
  }

  if (!cfg.checkpoint_path.empty()) save_denoiser(cfg.checkpoint_path, net, sched);
  return curve;
}

void save_denoiser(const std::string& path, const DenoiserNet& net,
                   const NoiseSchedule& sched) {
  CheckpointEntry betas;
  betas.name = "schedule/beta";
  betas.shape = {sched.T};
  betas.data = sched.beta;
  save_parameters(path, net.params, {betas});
}

NoiseSchedule load_denoiser(const std::string& path, DenoiserNet& net) {
  std::vector<CheckpointEntry> extras = load_parameters(path, net.params);
  for (CheckpointEntry& e : extras) {
    if (e.name == "schedule/beta") return schedule_from_betas(std::move(e.data));
  }
  throw DiffusionError("checkpoint " + path + " carries no schedule");
}

// ---- sampling ----

img::Image reverse_mean(const img::Image& x_t, const img::Image& eps_hat, int t,
                        const NoiseSchedule& sched) {
  check_t(t, sched, "reverse_mean");
  check_pair(x_t, eps_hat, "reverse_mean");
  double coef = sched.beta[t - 1] / std::sqrt(1.0 - sched.alpha_bar[t - 1]);
  double inv = 1.0 / std::sqrt(sched.alpha[t - 1]);
  img::Image mu(x_t.height, x_t.width, x_t.channels);
  for (size_t i = 0; i < mu.values.size(); ++i) {
    mu.values[i] = (x_t.values[i] - coef * eps_hat.values[i]) * inv;
  }
  return mu;
}

img::Image p_sample_step(const DenoiserNet& net, const img::Image& x_t, int t,
                         ObjectClass token, const img::Mask& m,
                         const NoiseSchedule& sched, const img::Image& z) {
  check_t(t, sched, "p_sample_step");
  NoGradGuard ng;
  Tensor pred = net.forward(denoiser_input(x_t, m), {t}, {static_cast<int>(token)});
  img::Image eps_hat = img::from_chw(pred.values(), x_t.height, x_t.width, 3);
  img::Image out = reverse_mean(x_t, eps_hat, t, sched);
  if (t > 1) {
    check_pair(x_t, z, "p_sample_step");
    double s = sched.sigma[t - 1];
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] += s * z.values[i];
  }
  return out;
}

namespace {

struct ReverseItem {
  const img::Image* x0;
  const img::Mask* mask;
  int token;
  Rng* rng;
  img::Image x;
};

// Shared reverse chain for single and batched inpainting. Every sample
// evolves exactly as it would alone: the batch only shares forward passes,
// and each item draws from its own stream.
std::vector<img::Image> run_reverse(const DenoiserNet& net,
                                    std::vector<ReverseItem>& items,
                                    const NoiseSchedule& sched, int t_start) {
  require_near_pure_noise(sched);
  int ts = t_start == 0 ? sched.T : t_start;
  if (ts < 1 || ts > sched.T) throw DiffusionError("inpaint: t_start outside schedule");
  NoGradGuard ng;

  int h = items.front().x0->height, w = items.front().x0->width;
  int n = static_cast<int>(items.size());
  size_t plane = static_cast<size_t>(h) * w;

  for (ReverseItem& it : items) {
    check_mask(*it.x0, *it.mask, "inpaint");
    if (!it.x0->same_dims(*items.front().x0)) {
      throw DiffusionError("inpaint: batched images must share dimensions");
    }
    img::Image eps = noise_image(h, w, 3, *it.rng);
    it.x = masked_q_sample(*it.x0, *it.mask, ts, eps, sched);
  }

  std::vector<int> steps_t(n), tokens(n);
  for (int i = 0; i < n; ++i) tokens[i] = items[i].token;
  for (int t = ts; t >= 1; --t) {
    std::vector<double> xin(static_cast<size_t>(n) * 4 * plane);
    for (int i = 0; i < n; ++i) {
      std::vector<double> chw = img::to_chw(items[i].x);
      double* row = xin.data() + static_cast<size_t>(i) * 4 * plane;
      std::copy(chw.begin(), chw.end(), row);
      for (size_t j = 0; j < plane; ++j) row[3 * plane + j] = items[i].mask->values[j];
    }
    std::fill(steps_t.begin(), steps_t.end(), t);
    Tensor pred = net.forward(Tensor::from_data({n, 4, h, w}, std::move(xin)),
                              steps_t, tokens);
    const std::vector<double>& pv = pred.values();
    for (int i = 0; i < n; ++i) {
      std::vector<double> sample(pv.begin() + static_cast<size_t>(i) * 3 * plane,
                                 pv.begin() + static_cast<size_t>(i + 1) * 3 * plane);
      img::Image eps_hat = img::from_chw(sample, h, w, 3);
      img::Image next = reverse_mean(items[i].x, eps_hat, t, sched);
      if (t > 1) {
        img::Image z = noise_image(h, w, 3, *items[i].rng);
        double s = sched.sigma[t - 1];
        for (size_t j = 0; j < next.values.size(); ++j) next.values[j] += s * z.values[j];
      }
      items[i].x = img::compose(next, *items[i].x0, *items[i].mask);
    }
  }

  std::vector<img::Image> out;
  out.reserve(items.size());
  for (ReverseItem& it : items) {
    out.push_back(img::compose(from_field(it.x), *it.x0, *it.mask));
  }
  return out;
}

}  // namespace

img::Image inpaint(const DenoiserNet& net, const img::Image& x0,
                   const img::Mask& m, ObjectClass token,
                   const NoiseSchedule& sched, Rng& rng, int t_start) {
  check_mask(x0, m, "inpaint");
  if (img::mask_area(m) == 0) {
    std::fprintf(stderr, "inpaint: empty mask, returning input unchanged\n");
    return x0;
  }
  std::vector<ReverseItem> items(1);
  items[0] = {&x0, &m, static_cast<int>(token), &rng, {}};
  return std::move(run_reverse(net, items, sched, t_start).front());
}

std::vector<img::Image> inpaint_batch(const DenoiserNet& net,
                                      const std::vector<RedrawJob>& jobs,
                                      const NoiseSchedule& sched, int t_start) {
  std::vector<Rng> rngs;
  rngs.reserve(jobs.size());
  std::vector<ReverseItem> items;
  std::vector<size_t> slot(jobs.size());  // index into items, or npos for empty masks
  for (size_t i = 0; i < jobs.size(); ++i) {
    const RedrawJob& job = jobs[i];
    check_mask(*job.x0, *job.mask, "inpaint");
    if (img::mask_area(*job.mask) == 0) {
      std::fprintf(stderr, "inpaint: empty mask, returning input unchanged\n");
      slot[i] = static_cast<size_t>(-1);
      continue;
    }
    slot[i] = items.size();
    rngs.emplace_back(job.seed);
    items.push_back({job.x0, job.mask, static_cast<int>(job.token), nullptr, {}});
  }
  for (size_t i = 0; i < items.size(); ++i) items[i].rng = &rngs[i];

  std::vector<img::Image> done;
  if (!items.empty()) done = run_reverse(net, items, sched, t_start);
  std::vector<img::Image> out(jobs.size());
  for (size_t i = 0; i < jobs.size(); ++i) {
    out[i] = slot[i] == static_cast<size_t>(-1) ? *jobs[i].x0 : std::move(done[slot[i]]);
  }
  return out;
}

img::Image sample_unmasked(const DenoiserNet& net, ObjectClass token,
                           const NoiseSchedule& sched, Rng& rng, int height,
                           int width) {
  require_near_pure_noise(sched);
  NoGradGuard ng;
  img::Mask all(height, width, 1);
  img::Image x = noise_image(height, width, 3, rng);
  for (int t = sched.T; t >= 1; --t) {
    img::Image z = t > 1 ? noise_image(height, width, 3, rng)
                         : img::Image(height, width, 3);
    x = p_sample_step(net, x, t, token, all, sched, z);
  }
  return from_field(x);
}

}  // namespace redraw::diff
