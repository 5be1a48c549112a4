#include "framecast/losses.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace framecast::losses {

using ad::Var;

void LossWeights::validate() const {
    const double all[] = {lambda1, lambda2, lambda3, lambda4, alpha, beta, delta};
    for (double v : all) {
        if (!std::isfinite(v)) throw std::invalid_argument("loss weights must be finite");
    }
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0 || alpha < 0 || beta < 0) {
        throw std::invalid_argument("loss weights must be nonnegative");
    }
    if (delta <= 0) throw std::invalid_argument("consistency margin delta must be positive");
}

std::vector<int> random_non_identity_permutation(int k, Rng& rng) {
    if (k < 3) {
        throw std::invalid_argument(
            "shuffle: need k >= 3 (a 2-element shuffle is indistinguishable from reversal)");
    }
    std::vector<int> perm(static_cast<size_t>(k));
    while (true) {
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = k - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.uniform_int(0, i));
            std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
        }
        bool identity = true;
        for (int i = 0; i < k; ++i) {
            if (perm[static_cast<size_t>(i)] != i) {
                identity = false;
                break;
            }
        }
        if (!identity) return perm;
    }
}

ShuffleSample make_shuffle_sample(std::span<const Tensor> ordered, Rng& rng) {
    ShuffleSample s;
    s.ordered.assign(ordered.begin(), ordered.end());
    s.permutation = random_non_identity_permutation(static_cast<int>(ordered.size()), rng);
    s.shuffled.reserve(ordered.size());
    for (int idx : s.permutation) s.shuffled.push_back(ordered[static_cast<size_t>(idx)]);
    return s;
}

std::vector<Var> apply_permutation(std::span<const Var> seq, const std::vector<int>& permutation) {
    if (seq.size() != permutation.size()) {
        throw std::invalid_argument("apply_permutation: length mismatch");
    }
    std::vector<Var> out;
    out.reserve(seq.size());
    for (int idx : permutation) out.push_back(seq[static_cast<size_t>(idx)]);
    return out;
}

Var bce_real(Var p) { return ad::mean(ad::affine(ad::log_clamped(p, kLogEps), -1.0, 0.0)); }

Var bce_fake(Var p) {
    return ad::mean(ad::affine(ad::log_clamped(ad::affine(p, -1.0, 1.0), kLogEps), -1.0, 0.0));
}

Var real_fake_bce(Var p_real, Var p_fake) { return ad::add(bce_real(p_real), bce_fake(p_fake)); }

Var pair_distance(Var feats_i, Var feats_j) {
    const Tensor& fi = feats_i.value();
    const Tensor& fj = feats_j.value();
    if (fi.rank() != 2 || fj.rank() != 2 || fi.dim(1) != fj.dim(1)) {
        throw std::invalid_argument("pair_distance: want (t,d) feature matrices");
    }
    const int n = std::min(fi.dim(0), fj.dim(0)) / 2;
    if (n < 1) throw std::invalid_argument("pair_distance: clips must have at least 2 frames");
    std::vector<int> odd, even;
    for (int m = 0; m < n; ++m) {
        odd.push_back(2 * m);
        even.push_back(2 * m + 1);
    }
    Var a = ad::gather_rows(feats_i, odd);
    Var b = ad::gather_rows(feats_j, even);
    return ad::mean(ad::row_norm(ad::sub(a, b)));
}

Var pair_consistency(Var feats_i, Var feats_j, bool same_clip, double delta) {
    if (delta <= 0) throw std::invalid_argument("pair_consistency: delta must be positive");
    Var d = pair_distance(feats_i, feats_j);
    if (same_clip) return ad::mul(d, d);
    Var hinge = ad::relu(ad::affine(d, -1.0, delta));
    return ad::mul(hinge, hinge);
}

Var batch_consistency(std::span<const Var> clip_features, double delta) {
    if (clip_features.empty()) throw std::invalid_argument("batch_consistency: empty batch");
    Var total;
    for (size_t i = 0; i < clip_features.size(); ++i) {
        for (size_t j = 0; j < clip_features.size(); ++j) {
            Var term = pair_consistency(clip_features[i], clip_features[j], i == j, delta);
            total = total.valid() ? ad::add(total, term) : term;
        }
    }
    return total;
}

Var mse(Var a, Var b) {
    Var d = ad::sub(a, b);
    return ad::mean(ad::mul(d, d));
}

Var l1(Var a, Var b) { return ad::mean(ad::abs_(ad::sub(a, b))); }

Objective combined_objective(Var consistency, Var content_rec, Var shuffle, Var motion_rec,
                             Var adversarial, Var frame_l1, const LossWeights& w) {
    w.validate();
    Objective o;
    o.content = ad::add(ad::affine(consistency, w.lambda1, 0.0),
                        ad::affine(content_rec, w.lambda2, 0.0));
    o.motion = ad::add(ad::affine(shuffle, w.lambda3, 0.0),
                       ad::affine(motion_rec, w.lambda4, 0.0));
    o.generate = ad::add(ad::affine(adversarial, w.alpha, 0.0),
                         ad::affine(frame_l1, w.beta, 0.0));
    o.total = ad::add(ad::add(o.content, o.motion), o.generate);
    return o;
}

}  // namespace framecast::losses
