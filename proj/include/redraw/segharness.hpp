#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "redraw/image.hpp"
#include "redraw/tensor.hpp"

namespace redraw::seg {

class SegError : public std::runtime_error {
public:
  explicit SegError(const std::string& what) : std::runtime_error(what) {}
};

// Pixel tallies of a binary prediction against ground truth; foreground=1
// is the positive class. The four counts always sum to the pixel count.
struct ConfusionCounts {
  int64_t tp = 0;
  int64_t tn = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  int64_t total() const { return tp + tn + fp + fn; }
};

ConfusionCounts confusion(const img::Mask& pred, const img::Mask& gt);

// One evaluation-table row; every value lies in [0,1]. A 0/0 ratio is
// defined as 1.0 when prediction and ground truth are both empty of
// positives, else 0.0.
struct MetricsRow {
  std::string policy;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double iou = 0.0;
};

MetricsRow metrics(const ConfusionCounts& c);

// Small U-shaped free-space segmenter: two downsampling stages at 8 and 16
// channels, a 16-channel bottleneck, two upsampling stages with additive
// skips, and a single-logit 3x3 head. ~5.5k parameters. forward() maps
// {N,3,H,W} RGB to a {N,1,H,W} probability map.
class SegNet {
public:
  explicit SegNet(uint64_t seed);

  Tensor logits(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;

  ParameterStore params;
};

struct SegTrainConfig {
  int epochs = 40;
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 0;
  std::string checkpoint_path;  // written after training when nonempty
};

using LossCurve = std::vector<std::pair<int, double>>;

// Minimizes pixelwise binary cross-entropy over the manifest with Adam.
// Each epoch is one shuffled pass; the curve holds (epoch, mean loss).
// Deterministic in cfg.seed. Throws SegError on divergence.
LossCurve train_segmenter(SegNet& net, const std::string& manifest_path,
                          const SegTrainConfig& cfg);

void save_segmenter(const std::string& path, const SegNet& net);
void load_segmenter(const std::string& path, SegNet& net);

// Probability map thresholded at 0.5.
img::Mask predict(const SegNet& net, const img::Image& image);

// Mean of per-image metrics over a labeled manifest; parallel across
// images. The policy field is left empty.
MetricsRow evaluate_model(const SegNet& net, const std::string& test_manifest_path);

struct PolicyModel {
  std::string policy;           // name from the augmentation policy registry
  std::string checkpoint_path;  // trained segmenter weights
};

// Loads each model, evaluates it on the test manifest, and returns one row
// per policy in registry order. Throws SegError when a checkpoint is
// missing or a policy name is unknown.
std::vector<MetricsRow> evaluate_table(const std::vector<PolicyModel>& models,
                                       const std::string& test_manifest_path);

// Header `policy,accuracy,precision,recall,f1,miou`, then one row per
// entry. miou is the mean of per-image IoU.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// Two-column `step,loss` CSV.
void write_loss_curve(const std::string& path, const LossCurve& curve);

}  // namespace redraw::seg
