#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "redraw/dataset.hpp"
#include "redraw/image.hpp"
#include "redraw/scenes.hpp"

namespace redraw::maskprov {

enum class ProposalSource { Oracle, Heuristic };

// A candidate region to erase. Guaranteed nonempty and disjoint from the
// sample's free-space label by every provider in this module.
struct InstanceProposal {
  img::Mask mask;
  scenes::ObjectClass cls = scenes::ObjectClass::Car;
  ProposalSource source = ProposalSource::Oracle;
};

// 4-connected component labeling of nonzero cells. labels gets -1 for
// background and 0..count-1 in raster order of first appearance.
int label_components(const std::vector<uint8_t>& fg, int height, int width,
                     std::vector<int>& labels);

// Subtracts free_space from every mask and drops proposals that end up
// empty. Applied by both providers before anything leaves the module.
std::vector<InstanceProposal> filter_foreground(std::vector<InstanceProposal> proposals,
                                                const img::Mask& free_space);

// Ground-truth instances, re-checked against free space rather than trusted.
std::vector<InstanceProposal> oracle_masks(const scenes::SceneSample& sample);

// Same, but sourced from a manifest record's stored instance masks.
std::vector<InstanceProposal> oracle_masks(const std::string& manifest_path,
                                           const ManifestRecord& rec,
                                           const img::Mask& free_space);

// Ground-truth-free variant: nearest-centroid quantization against the scene
// palette, 4-connected components over object-colored pixels, small
// components dropped, free-space pixels subtracted. May return an empty list.
std::vector<InstanceProposal> heuristic_masks(const img::Image& image,
                                              const img::Mask& free_space,
                                              int min_area = 8);

}  // namespace redraw::maskprov
