#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "framecast/autodiff.hpp"
#include "framecast/rng.hpp"
#include "framecast/types.hpp"

namespace framecast::model {

struct NetConfig {
    int conv_layers = 4;
    int fc_layers = 2;
    int base_width = 16;
    int latent_dim = 128;
    double leaky_slope = 0.2;
    int rnn_layers = 2;
    int rnn_hidden = 64;

    int fc_hidden() const { return 2 * latent_dim; }
    void validate() const;
    bool operator==(const NetConfig&) const = default;
};

// ---- building blocks --------------------------------------------------------

struct Dense {
    Param weight;  // (in, out)
    Param bias;    // (1, out)
    void init(const std::string& name, int in, int out, Rng& rng);
    ad::Var forward(ad::Tape& t, ad::Var x);
    void collect(std::vector<Param*>& out);
};

struct ConvLayer {
    Param weight;  // conv: (F, C, K, K); transpose: (C, F, K, K)
    Param bias;    // (F)
    Param gamma, beta;  // instance norm affine, present when normed
    bool normed = false;
    void init(const std::string& name, int rows, int cols, int f, int k, bool norm, Rng& rng);
    void collect(std::vector<Param*>& out);
};

struct LstmLayer {
    Param wx;  // (in, 4H), gate order i,f,g,o
    Param wh;  // (H, 4H), orthogonal per gate block
    Param b;   // (1, 4H), forget-gate block starts at 1
    int hidden = 0;
    void init(const std::string& name, int in, int hidden_size, Rng& rng);
    // One step; h and c are (N,H).
    std::pair<ad::Var, ad::Var> step(ad::Tape& t, ad::Var x, ad::Var h, ad::Var c);
    void collect(std::vector<Param*>& out);
};

// Stacked unidirectional LSTM; returns the top layer's hidden state after the
// whole sequence (optionally consumed in reverse).
struct LstmStack {
    std::vector<LstmLayer> layers;
    void init(const std::string& name, int in, int hidden, int depth, Rng& rng);
    ad::Var run(ad::Tape& t, std::span<const ad::Var> seq, bool reverse);
    void collect(std::vector<Param*>& out);
};

// ---- networks ----------------------------------------------------------------

// Stride-2 conv stack with instance norm and leaky activations, then an
// fc stack ending in a linear projection to the latent dimension.
struct ConvEncoder {
    NetConfig cfg;
    int in_channels = 1;
    std::vector<std::pair<int, int>> sizes;  // per-layer spatial size, sizes[0] = input
    int flat = 0;
    std::vector<ConvLayer> convs;
    std::vector<Dense> fcs;

    void init(const std::string& name, const NetConfig& c, int in_ch, int h, int w, Rng& rng);
    ad::Var forward(ad::Tape& t, ad::Var x);  // (N,in_ch,H,W) -> (N,d)
    void collect(std::vector<Param*>& out);
};

// Mirror of ConvEncoder: fc stack, reshape, stride-2 transposed convs; the
// final layer skips normalization and ends in a sigmoid.
struct ConvDecoder {
    NetConfig cfg;
    int out_channels = 1;
    int in_dim = 0;
    std::vector<std::pair<int, int>> sizes;
    int flat = 0;
    std::vector<Dense> fcs;
    std::vector<ConvLayer> deconvs;

    void init(const std::string& name, const NetConfig& c, int in_dim_, int out_ch, int h, int w,
              Rng& rng);
    ad::Var forward(ad::Tape& t, ad::Var h);  // (N,in_dim) -> (N,out_ch,H,W)
    void collect(std::vector<Param*>& out);
};

// d -> rnn_hidden projection, stacked LSTM over the window, rnn_hidden -> d.
struct MotionPredictor {
    Dense in_proj, out_proj;
    LstmStack lstm;
    void init(const std::string& name, const NetConfig& c, Rng& rng);
    ad::Var forward(ad::Tape& t, std::span<const ad::Var> window);  // -> (N,d)
    void collect(std::vector<Param*>& out);
};

// Bidirectional LSTM over a feature sequence, concatenated final states into a
// logistic head: 1 means natural order.
struct ShuffleDiscriminator {
    LstmStack fwd, bwd;
    Dense head;
    void init(const std::string& name, const NetConfig& c, Rng& rng);
    ad::Var forward(ad::Tape& t, std::span<const ad::Var> seq);  // -> (N,1) in (0,1)
    void collect(std::vector<Param*>& out);
};

// Conv trunk (shared architecture with the encoders) into a logistic scalar.
struct FrameDiscriminator {
    NetConfig cfg;
    int flat = 0;
    std::vector<ConvLayer> convs;
    Dense head;
    void init(const std::string& name, const NetConfig& c, int h, int w, Rng& rng);
    ad::Var forward(ad::Tape& t, ad::Var x);  // (N,1,H,W) -> (N,1) in (0,1)
    void collect(std::vector<Param*>& out);
};

// ---- bundle -------------------------------------------------------------------

inline constexpr const char* kNetworkNames[8] = {"E_c", "G_c", "E_m",    "G_m",
                                                 "f_lstm", "SD", "G", "D"};

// All eight networks plus per-network trainable flags. Parameter registration
// order is fixed, so checkpoints and digests are stable for a given config.
class ModelBundle {
public:
    ModelBundle(const NetConfig& cfg, int frame_h, int frame_w, uint64_t init_seed,
                int context_len, int horizon);

    const NetConfig& config() const { return cfg_; }
    int frame_h() const { return h_; }
    int frame_w() const { return w_; }
    int context_len() const { return context_len_; }
    int horizon() const { return horizon_; }

    ConvEncoder& content_encoder() { return content_enc_; }
    ConvDecoder& content_decoder() { return content_dec_; }
    ConvEncoder& motion_encoder() { return motion_enc_; }
    ConvDecoder& motion_decoder() { return motion_dec_; }
    MotionPredictor& predictor() { return predictor_; }
    ShuffleDiscriminator& shuffle_discriminator() { return shuffle_disc_; }
    ConvDecoder& generator() { return generator_; }
    FrameDiscriminator& frame_discriminator() { return frame_disc_; }

    // Collected on demand in fixed registration order, so the bundle stays
    // safely movable. Pointers are valid while the bundle is alive and unmoved.
    std::vector<Param*> params() const;
    std::vector<Param*> params_of(const std::string& network) const;
    static std::string network_of(const Param& p);

    bool trainable(const std::string& network) const { return trainable_.at(network); }
    void set_trainable(const std::string& network, bool v) { trainable_.at(network) = v; }
    void set_all_trainable(bool v);

    // fnv1a over the raw little-endian doubles of the network's parameters.
    std::string network_digest(const std::string& network) const;

    bool all_finite() const;

    // ---- operations ----
    ad::Var encode_content(ad::Tape& t, ad::Var frames);     // (N,1,H,W) -> (N,d)
    ad::Var decode_content(ad::Tape& t, ad::Var features);   // (N,d) -> (N,1,H,W)
    ad::Var encode_motion(ad::Tape& t, ad::Var flow_images); // (N,2,H,W) -> (N,d)
    ad::Var decode_motion(ad::Tape& t, ad::Var features);    // (N,d) -> (N,2,H,W)
    ad::Var predict_motion_feature(ad::Tape& t, std::span<const ad::Var> window);
    ad::Var shuffle_discriminate(ad::Tape& t, std::span<const ad::Var> seq);
    ad::Var discriminate_frame(ad::Tape& t, ad::Var frames);
    ad::Var generate_frame(ad::Tape& t, ad::Var content, ad::Var motion);  // concat -> (N,1,H,W)

    // Value-level conveniences (fresh tape per call).
    Tensor encode_content(const Tensor& frames);
    Tensor decode_content(const Tensor& features);
    Tensor encode_motion(const Tensor& flow_images);
    Tensor decode_motion(const Tensor& features);
    double shuffle_discriminate(std::span<const Tensor> seq);
    double discriminate_frame(const Tensor& frame);

private:
    NetConfig cfg_;
    int h_, w_;
    int context_len_, horizon_;
    ConvEncoder content_enc_, motion_enc_;
    ConvDecoder content_dec_, motion_dec_;
    MotionPredictor predictor_;
    ShuffleDiscriminator shuffle_disc_;
    ConvDecoder generator_;
    FrameDiscriminator frame_disc_;
    std::map<std::string, bool> trainable_;
};

// ---- rollout ---------------------------------------------------------------------

struct RolloutVars {
    ad::Var content;                 // (N,d)
    std::vector<ad::Var> features;   // k predicted motion features, (N,d)
    std::vector<ad::Var> frames;     // k predicted frames, (N,1,H,W)
};

// Autoregressive future-frame generation: the content feature comes from the
// last context frame; the sliding feature window starts from the encoded
// context flows and absorbs each prediction.
RolloutVars rollout_on_tape(ad::Tape& t, ModelBundle& bundle,
                            std::span<const ad::Var> context_frames,
                            std::span<const ad::Var> context_flow_images, int horizon);

struct RolloutTrace {
    std::vector<Tensor> frames;              // k frames, (H,W)
    std::vector<Tensor> predicted_features;  // k features, (1,d)
};

RolloutTrace rollout(ModelBundle& bundle, std::span<const Tensor> context_frames,
                     std::span<const Tensor> context_flow_images, int horizon);

// ---- tensor packing helpers ---------------------------------------------------------

Tensor stack_frames(std::span<const Tensor> frames);        // n x (H,W) -> (n,1,H,W)
Tensor stack_flow_images(std::span<const Tensor> images);   // n x (2,H,W) -> (n,2,H,W)
Tensor frame_from_batch(const Tensor& batch, int index);    // (N,1,H,W) -> (H,W)

}  // namespace framecast::model
