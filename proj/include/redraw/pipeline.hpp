#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "redraw/classic_aug.hpp"
#include "redraw/diffusion.hpp"
#include "redraw/image.hpp"
#include "redraw/maskprov.hpp"
#include "redraw/rng.hpp"

namespace redraw::pipe {

class PipelineError : public std::runtime_error {
public:
  explicit PipelineError(const std::string& what) : std::runtime_error(what) {}
};

// How the redraw token is chosen: the erased instance's own class, or a
// uniformly random class for deliberate restyling.
enum class TokenPolicy { SameClass, Restyle };

struct AugmentedSample {
  img::Image image;
  img::Mask label;        // always bit-identical to the source label
  std::string provenance;  // serialized JSON object
};

// Picks one proposal and redraws it under the token policy. With no
// proposals the original is duplicated and the fallback logged to stderr.
// Pixels outside the chosen mask stay bit-identical to the input.
AugmentedSample erase_then_redraw(const img::Image& image, const img::Mask& label,
                                  const std::vector<maskprov::InstanceProposal>& proposals,
                                  const diff::DenoiserNet& net,
                                  const diff::NoiseSchedule& sched,
                                  TokenPolicy token_policy, Rng& rng);

struct AugmentConfig {
  aug::PolicyKind policy = aug::PolicyKind::Standard;
  int k = 3;  // synthetic replicas per original
  uint64_t seed = 0;
  maskprov::ProposalSource provider = maskprov::ProposalSource::Oracle;
  TokenPolicy token_policy = TokenPolicy::SameClass;
  std::string denoiser_checkpoint;  // required for the erase_redraw policy
};

// Writes originals plus k synthetics per original into out_dir and returns
// the new manifest path: n*(k+1) records, originals first in each group.
// Every synthetic records its policy, source index, replica, and seed in
// the manifest provenance object. Deterministic in cfg.seed; parallel
// across source samples.
std::string augment_dataset(const std::string& manifest_path, const AugmentConfig& cfg,
                            const std::string& out_dir);

}  // namespace redraw::pipe
