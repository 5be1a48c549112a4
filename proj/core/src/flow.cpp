#include "framecast/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

namespace framecast::flow {

ProviderKind provider_kind_from_string(const std::string& s) {
    if (s == "analytic") return ProviderKind::analytic;
    if (s == "block") return ProviderKind::block_matching;
    throw std::invalid_argument("unknown flow provider '" + s + "' (want analytic|block)");
}

std::string to_string(ProviderKind kind) {
    return kind == ProviderKind::analytic ? "analytic" : "block";
}

namespace {

void validate(const BlockMatchParams& p, int h, int w) {
    if (p.patch < 3 || p.patch % 2 == 0) {
        throw std::invalid_argument("block matching: patch size must be odd and >= 3");
    }
    if (p.radius < 1) throw std::invalid_argument("block matching: radius must be >= 1");
    if (p.radius >= std::min(h, w)) {
        throw std::invalid_argument("block matching: search radius must be smaller than the frame");
    }
    if (p.patch > std::min(h, w)) {
        throw std::invalid_argument("block matching: patch larger than the frame");
    }
}

}  // namespace

FlowField estimate_flow(const Tensor& frame_t, const Tensor& frame_t1,
                        const BlockMatchParams& params) {
    if (frame_t.rank() != 2 || !frame_t.same_shape(frame_t1)) {
        throw std::invalid_argument("block matching: frame shape mismatch");
    }
    const int h = frame_t.dim(0), w = frame_t.dim(1);
    validate(params, h, w);
    const int P = params.patch, R = params.radius;

    FlowField flow(h, w);
    for (int y0 = 0; y0 + P <= h; y0 += P) {
        for (int x0 = 0; x0 + P <= w; x0 += P) {
            int best_u = 0, best_v = 0;
            double best_ssd = std::numeric_limits<double>::infinity();
            bool have = false;
            for (int dv = -R; dv <= R; ++dv) {
                const int ty = y0 + dv;
                if (ty < 0 || ty + P > h) continue;
                for (int du = -R; du <= R; ++du) {
                    const int tx = x0 + du;
                    if (tx < 0 || tx + P > w) continue;
                    double ssd = 0.0;
                    for (int y = 0; y < P; ++y) {
                        for (int x = 0; x < P; ++x) {
                            const double d = frame_t.at(y0 + y, x0 + x) - frame_t1.at(ty + y, tx + x);
                            ssd += d * d;
                        }
                    }
                    const bool better =
                        !have || ssd < best_ssd ||
                        (ssd == best_ssd &&
                         (std::abs(du) + std::abs(dv) < std::abs(best_u) + std::abs(best_v) ||
                          (std::abs(du) + std::abs(dv) == std::abs(best_u) + std::abs(best_v) &&
                           (du < best_u || (du == best_u && dv < best_v)))));
                    if (better) {
                        best_ssd = ssd;
                        best_u = du;
                        best_v = dv;
                        have = true;
                    }
                }
            }
            for (int y = 0; y < P; ++y) {
                for (int x = 0; x < P; ++x) {
                    flow.u.at(y0 + y, x0 + x) = best_u;
                    flow.v.at(y0 + y, x0 + x) = best_v;
                }
            }
        }
    }
    return flow;
}

Tensor flow_to_image(const FlowField& flow, double bound) {
    if (bound <= 0.0) throw std::invalid_argument("flow_to_image: bound must be positive");
    const int h = flow.height(), w = flow.width();
    Tensor img({2, h, w});
    auto map = [bound](double x) {
        return std::clamp(x, -bound, bound) / (2.0 * bound) + 0.5;
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            img[static_cast<size_t>(y) * w + x] = map(flow.u.at(y, x));
            img[static_cast<size_t>(h) * w + static_cast<size_t>(y) * w + x] = map(flow.v.at(y, x));
        }
    }
    return img;
}

FlowField image_to_flow(const Tensor& image, double bound) {
    if (bound <= 0.0) throw std::invalid_argument("image_to_flow: bound must be positive");
    if (image.rank() != 3 || image.dim(0) != 2) {
        throw std::invalid_argument("image_to_flow: want a (2,H,W) tensor");
    }
    const int h = image.dim(1), w = image.dim(2);
    FlowField flow(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            flow.u.at(y, x) = (image[static_cast<size_t>(y) * w + x] - 0.5) * 2.0 * bound;
            flow.v.at(y, x) =
                (image[static_cast<size_t>(h) * w + static_cast<size_t>(y) * w + x] - 0.5) * 2.0 *
                bound;
        }
    }
    return flow;
}

namespace {

class AnalyticProvider final : public FlowProvider {
public:
    FlowField flow(const Dataset& ds, int clip_index, int idx) const override {
        return ds.flows.at(static_cast<size_t>(clip_index)).at(static_cast<size_t>(idx));
    }
    std::string name() const override { return "analytic"; }
};

class BlockMatchingProvider final : public FlowProvider {
public:
    explicit BlockMatchingProvider(const BlockMatchParams& p) : params_(p) {}

    FlowField flow(const Dataset& ds, int clip_index, int idx) const override {
        const auto& clip = ds.clips.at(static_cast<size_t>(clip_index));
        return estimate_flow(clip.frames.at(static_cast<size_t>(idx)),
                             clip.frames.at(static_cast<size_t>(idx) + 1), params_);
    }
    std::string name() const override { return "block"; }

private:
    BlockMatchParams params_;
};

}  // namespace

std::unique_ptr<FlowProvider> make_provider(ProviderKind kind, const BlockMatchParams& params) {
    if (kind == ProviderKind::analytic) return std::make_unique<AnalyticProvider>();
    return std::make_unique<BlockMatchingProvider>(params);
}

}  // namespace framecast::flow
