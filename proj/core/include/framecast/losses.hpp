#pragma once

#include <span>
#include <vector>

#include "framecast/autodiff.hpp"
#include "framecast/rng.hpp"

namespace framecast::losses {

struct LossWeights {
    double lambda1 = 1.0;   // consistency
    double lambda2 = 0.01;  // content reconstruction
    double lambda3 = 1.0;   // shuffle
    double lambda4 = 0.01;  // motion reconstruction
    double alpha = 1.0;     // adversarial
    double beta = 1e-5;     // future-frame l1
    double delta = 1.0;     // consistency margin

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

// Clamp inside the logs of every probability-valued loss.
inline constexpr double kLogEps = 1e-7;

// ---- shuffled sequence construction -----------------------------------------

// Uniform over the k!-1 non-identity permutations (identity rejection-sampled).
std::vector<int> random_non_identity_permutation(int k, Rng& rng);

struct ShuffleSample {
    std::vector<Tensor> ordered;
    std::vector<int> permutation;   // shuffled[j] = ordered[permutation[j]]
    std::vector<Tensor> shuffled;
};

ShuffleSample make_shuffle_sample(std::span<const Tensor> ordered, Rng& rng);

std::vector<ad::Var> apply_permutation(std::span<const ad::Var> seq,
                                       const std::vector<int>& permutation);

// ---- probability losses -------------------------------------------------------

ad::Var bce_real(ad::Var p);  // mean(-log p), eps-clamped
ad::Var bce_fake(ad::Var p);  // mean(-log(1-p)), eps-clamped

// -log(p_real) - log(1 - p_fake): the discriminator objective shared by the
// shuffle loss and the adversarial loss.
ad::Var real_fake_bce(ad::Var p_real, ad::Var p_fake);

inline ad::Var shuffle_loss(ad::Var p_ordered, ad::Var p_shuffled) {
    return real_fake_bce(p_ordered, p_shuffled);
}

// Discriminator and non-saturating generator objectives. The caller detaches
// the fake branch for the d step; the trainer composes these per stage.
inline ad::Var adversarial_d_loss(ad::Var p_real, ad::Var p_fake_detached) {
    return real_fake_bce(p_real, p_fake_detached);
}
inline ad::Var adversarial_g_loss(ad::Var p_fake) { return bce_real(p_fake); }

// ---- consistency ----------------------------------------------------------------

// Mean over n of || feats_i[2n-2] - feats_j[2n-1] ||_2 for n = 1..floor(t/2):
// odd frames of clip i against even frames of clip j.
ad::Var pair_distance(ad::Var feats_i, ad::Var feats_j);

// y*D^2 + (1-y)*max(delta - D, 0)^2 with y = 1 iff same_clip.
ad::Var pair_consistency(ad::Var feats_i, ad::Var feats_j, bool same_clip, double delta);

// Summed over all ordered clip pairs (i, j) in the batch, including i = j.
ad::Var batch_consistency(std::span<const ad::Var> clip_features, double delta);

// ---- reconstructions ---------------------------------------------------------------

ad::Var mse(ad::Var a, ad::Var b);
ad::Var l1(ad::Var a, ad::Var b);

// ---- combined objective ---------------------------------------------------------------

struct Objective {
    ad::Var content;   // lambda1 * consistency + lambda2 * content_rec
    ad::Var motion;    // lambda3 * shuffle + lambda4 * motion_rec
    ad::Var generate;  // alpha * adversarial + beta * frame_l1
    ad::Var total;
};

Objective combined_objective(ad::Var consistency, ad::Var content_rec, ad::Var shuffle,
                             ad::Var motion_rec, ad::Var adversarial, ad::Var frame_l1,
                             const LossWeights& w);

}  // namespace framecast::losses
