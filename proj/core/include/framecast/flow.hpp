#pragma once

#include <memory>
#include <string>

#include "framecast/types.hpp"

namespace framecast::flow {

struct BlockMatchParams {
    int patch = 5;   // odd, >= 3
    int radius = 4;  // >= max expected speed
};

enum class ProviderKind { analytic, block_matching };

ProviderKind provider_kind_from_string(const std::string& s);
std::string to_string(ProviderKind kind);

// Exhaustive SSD block matching on a non-overlapping patch grid (stride =
// patch). Ties break to the smallest |u|+|v|, then lexicographic (u, v).
// Border pixels not covered by a full patch get zero flow.
FlowField estimate_flow(const Tensor& frame_t, const Tensor& frame_t1,
                        const BlockMatchParams& params);

// clamp(x, -bound, bound) / (2*bound) + 0.5 per channel; returns (2, H, W).
Tensor flow_to_image(const FlowField& flow, double bound);
FlowField image_to_flow(const Tensor& image, double bound);

// Uniform source of per-step flow for training and evaluation, satisfied both
// by the dataset's stored analytic fields and by the block-matching estimator.
class FlowProvider {
public:
    virtual ~FlowProvider() = default;
    // Flow between frames idx and idx+1 of the given clip.
    virtual FlowField flow(const Dataset& ds, int clip_index, int idx) const = 0;
    virtual std::string name() const = 0;
};

std::unique_ptr<FlowProvider> make_provider(ProviderKind kind, const BlockMatchParams& params = {});

}  // namespace framecast::flow
