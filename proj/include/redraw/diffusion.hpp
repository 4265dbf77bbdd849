#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "redraw/image.hpp"
#include "redraw/rng.hpp"
#include "redraw/scenes.hpp"
#include "redraw/tensor.hpp"

namespace redraw::diff {

class DiffusionError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Linear variance schedule. beta[t-1] holds β_t; sigma is the reverse-step
// noise scale, fixed to √β_t.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;      // 1 − β_t
  std::vector<double> alpha_bar;  // running product of alpha
  std::vector<double> sigma;      // √β_t
};

inline constexpr int kDefaultT = 100;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.07;

// β_t = beta_start + (t−1)/(T−1)·(beta_end−beta_start); T=1 uses beta_start.
// Validates 0 < beta_start ≤ beta_end < 1 and T ≥ 1. Whether the chain ends
// near pure noise is a property of the caller's intent, checked separately
// by require_near_pure_noise.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);
// Rebuilds the derived arrays from a raw β sequence (checkpoint reload).
NoiseSchedule schedule_from_betas(std::vector<double> beta);

// Training and sampling assume x_T is essentially pure noise; throws unless
// alpha_bar[T-1] < 0.05.
void require_near_pure_noise(const NoiseSchedule& sched);

// Diffusion runs on unclamped [−1,1]-centered fields; images are [0,1] at
// the module boundary.
img::Image to_field(const img::Image& x0);   // v ↦ 2v−1
img::Image from_field(const img::Image& f);  // v ↦ clamp((v+1)/2, 0, 1)
// iid standard normal planes, raster order.
img::Image noise_image(int height, int width, int channels, Rng& rng);

// x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·eps with x0 mapped to field space first.
// Output is field-space and unclamped.
img::Image q_sample(const img::Image& x0, int t, const img::Image& eps,
                    const NoiseSchedule& sched);

// compose(q_sample(x0,t,eps), x0, m): field-space values under the mask,
// untouched [0,1] x0 values outside it. This hybrid is exactly what the
// denoiser sees at train and sampling time, and it keeps unmasked pixels
// bit-identical to x0 (a 2v−1 round trip would not).
img::Image masked_q_sample(const img::Image& x0, const img::Mask& m, int t,
                           const img::Image& eps, const NoiseSchedule& sched);

using scenes::ObjectClass;

// U-shaped conv denoiser: two pooled stages (16→32 channels), a bottleneck,
// and two upsampling stages with additive skips. The timestep enters as a
// learned projection of 16 sinusoidal features, added per stage as a
// per-sample channel bias; the class embedding is added the same way at the
// bottleneck. Input {N,4,H,W} (field-space image + mask plane), output
// {N,3,H,W} = predicted noise. H and W must be divisible by 4.
struct DenoiserNet {
  ParameterStore params;

  explicit DenoiserNet(uint64_t seed);
  Tensor forward(const Tensor& x, const std::vector<int>& ts,
                 const std::vector<int>& tokens) const;
};

// {1,4,H,W} plane stack for one sample: CHW image then the mask plane.
Tensor denoiser_input(const img::Image& x_t, const img::Mask& m);

// Σ_{pixels with m=1} ‖eps − ε̂‖² / (3·area(m)), differentiable w.r.t. the
// net parameters. Throws on an empty mask.
Tensor diffusion_loss(const DenoiserNet& net, const img::Image& x0,
                      const img::Mask& m, ObjectClass token, int t,
                      const img::Image& eps, const NoiseSchedule& sched);

struct DiffusionTrainConfig {
  int batch = 4;
  int steps = 2000;
  double lr = 1e-3;
  double ema = 0.0;  // EMA decay for the exported weights; 0 disables
  uint64_t seed = 0;
  std::string checkpoint_path;  // empty: no checkpoint written
};

// (step, loss) at step 1 and every 50th step.
using LossCurve = std::vector<std::pair<int, double>>;

// Each step samples (scene, instance, t, eps) per batch slot and takes one
// Adam step on diffusion_loss. Aborts with a diagnostic if the loss leaves
// the finite range.
LossCurve train_diffusion(DenoiserNet& net, const std::string& manifest_path,
                          const NoiseSchedule& sched,
                          const DiffusionTrainConfig& cfg);

// Parameter checkpoint with the β schedule stored alongside.
void save_denoiser(const std::string& path, const DenoiserNet& net,
                   const NoiseSchedule& sched);
NoiseSchedule load_denoiser(const std::string& path, DenoiserNet& net);

// μ_θ = (x_t − (β_t/√(1−ᾱ_t))·ε̂) / √α_t.
img::Image reverse_mean(const img::Image& x_t, const img::Image& eps_hat,
                        int t, const NoiseSchedule& sched);

// x_{t−1} = μ_θ + σ_t·z; z is ignored at t=1.
img::Image p_sample_step(const DenoiserNet& net, const img::Image& x_t, int t,
                         ObjectClass token, const img::Mask& m,
                         const NoiseSchedule& sched, const img::Image& z);

// Redraws the masked region from noise, conditioned on token. The clean
// background is re-imposed after every reverse step, so unmasked pixels pass
// through bit-identical; masked pixels are clamped back to [0,1] at the end.
// t_start = 0 runs the full chain from T. An empty mask returns x0 and warns.
img::Image inpaint(const DenoiserNet& net, const img::Image& x0,
                   const img::Mask& m, ObjectClass token,
                   const NoiseSchedule& sched, Rng& rng, int t_start = 0);

// Batched variant, one independent noise stream per job; the output of each
// job is bit-identical to a standalone inpaint seeded the same way (samples
// never interact inside the net), the steps just share forward passes.
struct RedrawJob {
  const img::Image* x0 = nullptr;
  const img::Mask* mask = nullptr;
  ObjectClass token = ObjectClass::Car;
  uint64_t seed = 0;
};
std::vector<img::Image> inpaint_batch(const DenoiserNet& net,
                                      const std::vector<RedrawJob>& jobs,
                                      const NoiseSchedule& sched,
                                      int t_start = 0);

// Full-image generation from pure noise with an all-ones mask plane; the
// sanity path for eyeballing what the net learned.
img::Image sample_unmasked(const DenoiserNet& net, ObjectClass token,
                           const NoiseSchedule& sched, Rng& rng, int height,
                           int width);

}  // namespace redraw::diff
