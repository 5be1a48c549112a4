#include "framecast/nets.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "framecast/hash.hpp"

namespace framecast::model {

using ad::Tape;
using ad::Var;

void NetConfig::validate() const {
    if (conv_layers < 1 || fc_layers < 1 || rnn_layers < 1) {
        throw std::invalid_argument("net config: layer counts must be >= 1");
    }
    if (base_width < 1 || latent_dim < 1 || rnn_hidden < 1) {
        throw std::invalid_argument("net config: widths must be positive");
    }
}

namespace {

constexpr int kKernel = 3;
constexpr int kStride = 2;
constexpr int kPad = 1;

Tensor uniform_tensor(std::vector<int> shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

// Random orthogonal (n,n) block, sign-fixed for determinism.
Eigen::MatrixXd orthogonal(int n, Rng& rng) {
    Eigen::MatrixXd g(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) g(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j) {
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    return q;
}

int channels_at(const NetConfig& cfg, int layer) {  // layer in [1, conv_layers]
    return cfg.base_width << (layer - 1);
}

}  // namespace

// ---- building blocks ----------------------------------------------------------

void Dense::init(const std::string& name, int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Param{name + "/weight", uniform_tensor({in, out}, bound, rng)};
    bias = Param{name + "/bias", uniform_tensor({1, out}, bound, rng)};
}

Var Dense::forward(Tape& t, Var x) {
    return ad::linear(x, t.param(weight), t.param(bias));
}

void Dense::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

void ConvLayer::init(const std::string& name, int rows, int cols, int f, int k, bool norm,
                     Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols) * k * k);
    weight = Param{name + "/weight", uniform_tensor({rows, cols, k, k}, bound, rng)};
    bias = Param{name + "/bias", uniform_tensor({f}, bound, rng)};
    normed = norm;
    if (normed) {
        gamma = Param{name + "/gamma", Tensor::full({f}, 1.0)};
        beta = Param{name + "/beta", Tensor::zeros({f})};
    }
}

void ConvLayer::collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
    if (normed) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
}

void LstmLayer::init(const std::string& name, int in, int hidden_size, Rng& rng) {
    hidden = hidden_size;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    wx = Param{name + "/wx", uniform_tensor({in, 4 * hidden}, bound, rng)};
    Tensor whv({hidden, 4 * hidden});
    for (int gate = 0; gate < 4; ++gate) {
        const Eigen::MatrixXd q = orthogonal(hidden, rng);
        for (int i = 0; i < hidden; ++i) {
            for (int j = 0; j < hidden; ++j) whv.at(i, gate * hidden + j) = q(i, j);
        }
    }
    wh = Param{name + "/wh", std::move(whv)};
    Tensor bv({1, 4 * hidden});
    for (int j = 0; j < hidden; ++j) bv.at(0, hidden + j) = 1.0;  // forget gate
    b = Param{name + "/b", std::move(bv)};
}

std::pair<Var, Var> LstmLayer::step(Tape& t, Var x, Var h, Var c) {
    Var gates = ad::add(ad::linear(x, t.param(wx), t.param(b)), ad::matmul(h, t.param(wh)));
    Var i = ad::sigmoid(ad::slice_cols(gates, 0, hidden));
    Var f = ad::sigmoid(ad::slice_cols(gates, hidden, hidden));
    Var g = ad::tanh_(ad::slice_cols(gates, 2 * hidden, hidden));
    Var o = ad::sigmoid(ad::slice_cols(gates, 3 * hidden, hidden));
    Var c_next = ad::add(ad::mul(f, c), ad::mul(i, g));
    Var h_next = ad::mul(o, ad::tanh_(c_next));
    return {h_next, c_next};
}

void LstmLayer::collect(std::vector<Param*>& out) {
    out.push_back(&wx);
    out.push_back(&wh);
    out.push_back(&b);
}

void LstmStack::init(const std::string& name, int in, int hidden, int depth, Rng& rng) {
    layers.resize(static_cast<size_t>(depth));
    for (int l = 0; l < depth; ++l) {
        layers[static_cast<size_t>(l)].init(name + "/l" + std::to_string(l), l == 0 ? in : hidden,
                                            hidden, rng);
    }
}

Var LstmStack::run(Tape& t, std::span<const Var> seq, bool reverse) {
    if (seq.empty()) throw std::invalid_argument("lstm: empty sequence");
    const int n = t.value(seq[0]).dim(0);
    std::vector<Var> inputs(seq.begin(), seq.end());
    if (reverse) std::reverse(inputs.begin(), inputs.end());
    Var top;
    for (auto& layer : layers) {
        Var h = t.constant(Tensor::zeros({n, layer.hidden}));
        Var c = t.constant(Tensor::zeros({n, layer.hidden}));
        std::vector<Var> outputs;
        outputs.reserve(inputs.size());
        for (const Var& x : inputs) {
            auto [hn, cn] = layer.step(t, x, h, c);
            h = hn;
            c = cn;
            outputs.push_back(h);
        }
        inputs = std::move(outputs);
        top = h;
    }
    return top;
}

void LstmStack::collect(std::vector<Param*>& out) {
    for (auto& l : layers) l.collect(out);
}

// ---- encoder / decoder -----------------------------------------------------------

void ConvEncoder::init(const std::string& name, const NetConfig& c, int in_ch, int h, int w,
                       Rng& rng) {
    cfg = c;
    in_channels = in_ch;
    sizes = {{h, w}};
    convs.resize(static_cast<size_t>(cfg.conv_layers));
    for (int l = 1; l <= cfg.conv_layers; ++l) {
        const int ci = l == 1 ? in_ch : channels_at(cfg, l - 1);
        const int co = channels_at(cfg, l);
        auto [ph, pw] = sizes.back();
        const int oh = ad::conv_out_size(ph, kKernel, kStride, kPad);
        const int ow = ad::conv_out_size(pw, kKernel, kStride, kPad);
        // normalizing a single spatial element would erase the signal
        convs[static_cast<size_t>(l - 1)].init(name + "/conv" + std::to_string(l - 1), co, ci, co,
                                               kKernel, oh * ow > 1, rng);
        sizes.emplace_back(oh, ow);
    }
    flat = channels_at(cfg, cfg.conv_layers) * sizes.back().first * sizes.back().second;
    fcs.resize(static_cast<size_t>(cfg.fc_layers));
    int din = flat;
    for (int l = 0; l < cfg.fc_layers; ++l) {
        const int dout = l + 1 == cfg.fc_layers ? cfg.latent_dim : cfg.fc_hidden();
        fcs[static_cast<size_t>(l)].init(name + "/fc" + std::to_string(l), din, dout, rng);
        din = dout;
    }
}

Var ConvEncoder::forward(Tape& t, Var x) {
    // value() references go stale as ops append nodes; copy what we need.
    const int n = t.value(x).dim(0);
    if (t.value(x).rank() != 4 || t.value(x).dim(1) != in_channels ||
        t.value(x).dim(2) != sizes[0].first || t.value(x).dim(3) != sizes[0].second) {
        throw std::invalid_argument("encoder: input shape mismatch, got " +
                                    Tensor::shape_str(t.value(x).shape()));
    }
    Var h = x;
    for (auto& conv : convs) {
        h = ad::conv2d(h, t.param(conv.weight), t.param(conv.bias), kStride, kPad);
        if (conv.normed) h = ad::instance_norm(h, t.param(conv.gamma), t.param(conv.beta));
        h = ad::leaky_relu(h, cfg.leaky_slope);
    }
    h = ad::reshape(h, {n, flat});
    for (size_t l = 0; l < fcs.size(); ++l) {
        h = fcs[l].forward(t, h);
        if (l + 1 < fcs.size()) h = ad::leaky_relu(h, cfg.leaky_slope);
    }
    return h;
}

void ConvEncoder::collect(std::vector<Param*>& out) {
    for (auto& c : convs) c.collect(out);
    for (auto& f : fcs) f.collect(out);
}

void ConvDecoder::init(const std::string& name, const NetConfig& c, int in_dim_, int out_ch,
                       int h, int w, Rng& rng) {
    cfg = c;
    out_channels = out_ch;
    in_dim = in_dim_;
    sizes = {{h, w}};
    for (int l = 1; l <= cfg.conv_layers; ++l) {
        auto [ph, pw] = sizes.back();
        sizes.emplace_back(ad::conv_out_size(ph, kKernel, kStride, kPad),
                           ad::conv_out_size(pw, kKernel, kStride, kPad));
    }
    flat = channels_at(cfg, cfg.conv_layers) * sizes.back().first * sizes.back().second;
    fcs.resize(static_cast<size_t>(cfg.fc_layers));
    int din = in_dim;
    for (int l = 0; l < cfg.fc_layers; ++l) {
        const int dout = l + 1 == cfg.fc_layers ? flat : cfg.fc_hidden();
        fcs[static_cast<size_t>(l)].init(name + "/fc" + std::to_string(l), din, dout, rng);
        din = dout;
    }
    deconvs.resize(static_cast<size_t>(cfg.conv_layers));
    for (int l = cfg.conv_layers; l >= 1; --l) {
        const int ci = channels_at(cfg, l);
        const int co = l == 1 ? out_ch : channels_at(cfg, l - 1);
        const auto [th, tw] = sizes[static_cast<size_t>(l - 1)];  // this layer's output size
        // no normalization before the sigmoid output, none on 1x1 maps
        const bool norm = l != 1 && th * tw > 1;
        // upsample + stride-1 conv stage; kernel layout matches conv2d
        deconvs[static_cast<size_t>(cfg.conv_layers - l)].init(
            name + "/deconv" + std::to_string(cfg.conv_layers - l), co, ci, co, kKernel, norm,
            rng);
    }
}

Var ConvDecoder::forward(Tape& t, Var h) {
    const Tensor& hv = t.value(h);
    if (hv.rank() != 2 || hv.dim(1) != in_dim) {
        throw std::invalid_argument("decoder: latent dim mismatch, got " +
                                    Tensor::shape_str(hv.shape()));
    }
    const int n = hv.dim(0);
    Var x = h;
    for (auto& fc : fcs) {
        x = fc.forward(t, x);
        x = ad::leaky_relu(x, cfg.leaky_slope);
    }
    const int l_last = cfg.conv_layers;
    x = ad::reshape(x, {n, channels_at(cfg, l_last), sizes.back().first, sizes.back().second});
    for (int i = 0; i < cfg.conv_layers; ++i) {
        auto& layer = deconvs[static_cast<size_t>(i)];
        const bool last = i + 1 == cfg.conv_layers;
        const auto [th, tw] = sizes[static_cast<size_t>(cfg.conv_layers - 1 - i)];
        x = ad::upsample_nearest(x, th, tw);
        x = ad::conv2d(x, t.param(layer.weight), t.param(layer.bias), 1, kPad);
        if (last) {
            x = ad::sigmoid(x);
        } else {
            if (layer.normed) {
                x = ad::instance_norm(x, t.param(layer.gamma), t.param(layer.beta));
            }
            x = ad::leaky_relu(x, cfg.leaky_slope);
        }
    }
    return x;
}

void ConvDecoder::collect(std::vector<Param*>& out) {
    for (auto& f : fcs) f.collect(out);
    for (auto& d : deconvs) d.collect(out);
}

// ---- predictor / discriminators ------------------------------------------------------

void MotionPredictor::init(const std::string& name, const NetConfig& c, Rng& rng) {
    in_proj.init(name + "/in_proj", c.latent_dim, c.rnn_hidden, rng);
    lstm.init(name + "/lstm", c.rnn_hidden, c.rnn_hidden, c.rnn_layers, rng);
    out_proj.init(name + "/out_proj", c.rnn_hidden, c.latent_dim, rng);
}

Var MotionPredictor::forward(Tape& t, std::span<const Var> window) {
    if (window.empty()) throw std::invalid_argument("predictor: empty window");
    std::vector<Var> proj;
    proj.reserve(window.size());
    for (const Var& f : window) proj.push_back(in_proj.forward(t, f));
    Var h = lstm.run(t, proj, /*reverse=*/false);
    return out_proj.forward(t, h);
}

void MotionPredictor::collect(std::vector<Param*>& out) {
    in_proj.collect(out);
    lstm.collect(out);
    out_proj.collect(out);
}

void ShuffleDiscriminator::init(const std::string& name, const NetConfig& c, Rng& rng) {
    fwd.init(name + "/fwd", c.latent_dim, c.rnn_hidden, c.rnn_layers, rng);
    bwd.init(name + "/bwd", c.latent_dim, c.rnn_hidden, c.rnn_layers, rng);
    head.init(name + "/head", 2 * c.rnn_hidden, 1, rng);
}

Var ShuffleDiscriminator::forward(Tape& t, std::span<const Var> seq) {
    if (seq.size() < 3) {
        throw std::invalid_argument("shuffle discriminator: need a sequence of length >= 3");
    }
    Var hf = fwd.run(t, seq, /*reverse=*/false);
    Var hb = bwd.run(t, seq, /*reverse=*/true);
    return ad::sigmoid(head.forward(t, ad::concat_cols(hf, hb)));
}

void ShuffleDiscriminator::collect(std::vector<Param*>& out) {
    fwd.collect(out);
    bwd.collect(out);
    head.collect(out);
}

void FrameDiscriminator::init(const std::string& name, const NetConfig& c, int h, int w,
                              Rng& rng) {
    cfg = c;
    convs.resize(static_cast<size_t>(cfg.conv_layers));
    std::pair<int, int> size = {h, w};
    for (int l = 1; l <= cfg.conv_layers; ++l) {
        const int ci = l == 1 ? 1 : channels_at(cfg, l - 1);
        const int co = channels_at(cfg, l);
        const int oh = ad::conv_out_size(size.first, kKernel, kStride, kPad);
        const int ow = ad::conv_out_size(size.second, kKernel, kStride, kPad);
        convs[static_cast<size_t>(l - 1)].init(name + "/conv" + std::to_string(l - 1), co, ci, co,
                                               kKernel, oh * ow > 1, rng);
        size = {oh, ow};
    }
    flat = channels_at(cfg, cfg.conv_layers) * size.first * size.second;
    head.init(name + "/head", flat, 1, rng);
}

Var FrameDiscriminator::forward(Tape& t, Var x) {
    const int n = t.value(x).dim(0);
    if (t.value(x).rank() != 4 || t.value(x).dim(1) != 1) {
        throw std::invalid_argument("frame discriminator: want (N,1,H,W) input");
    }
    Var h = x;
    for (auto& conv : convs) {
        h = ad::conv2d(h, t.param(conv.weight), t.param(conv.bias), kStride, kPad);
        if (conv.normed) h = ad::instance_norm(h, t.param(conv.gamma), t.param(conv.beta));
        h = ad::leaky_relu(h, cfg.leaky_slope);
    }
    h = ad::reshape(h, {n, flat});
    return ad::sigmoid(head.forward(t, h));
}

void FrameDiscriminator::collect(std::vector<Param*>& out) {
    for (auto& c : convs) c.collect(out);
    head.collect(out);
}

// ---- bundle ------------------------------------------------------------------------

ModelBundle::ModelBundle(const NetConfig& cfg, int frame_h, int frame_w, uint64_t init_seed,
                         int context_len, int horizon)
    : cfg_(cfg), h_(frame_h), w_(frame_w), context_len_(context_len), horizon_(horizon) {
    cfg_.validate();
    if (frame_h < 4 || frame_w < 4) throw std::invalid_argument("bundle: frame too small");
    if (context_len_ < 3) throw std::invalid_argument("bundle: context length must be >= 3");
    if (horizon_ < 1) throw std::invalid_argument("bundle: horizon must be >= 1");
    Rng rng(Rng::mix(init_seed, 0x6d6f64656cULL));
    content_enc_.init("E_c", cfg_, 1, h_, w_, rng);
    content_dec_.init("G_c", cfg_, cfg_.latent_dim, 1, h_, w_, rng);
    motion_enc_.init("E_m", cfg_, 2, h_, w_, rng);
    motion_dec_.init("G_m", cfg_, cfg_.latent_dim, 2, h_, w_, rng);
    predictor_.init("f_lstm", cfg_, rng);
    shuffle_disc_.init("SD", cfg_, rng);
    generator_.init("G", cfg_, 2 * cfg_.latent_dim, 1, h_, w_, rng);
    frame_disc_.init("D", cfg_, h_, w_, rng);
    for (const char* n : kNetworkNames) trainable_[n] = true;
}

std::vector<Param*> ModelBundle::params() const {
    auto* self = const_cast<ModelBundle*>(this);
    std::vector<Param*> out;
    self->content_enc_.collect(out);
    self->content_dec_.collect(out);
    self->motion_enc_.collect(out);
    self->motion_dec_.collect(out);
    self->predictor_.collect(out);
    self->shuffle_disc_.collect(out);
    self->generator_.collect(out);
    self->frame_disc_.collect(out);
    return out;
}

std::string ModelBundle::network_of(const Param& p) {
    return p.name.substr(0, p.name.find('/'));
}

std::vector<Param*> ModelBundle::params_of(const std::string& network) const {
    std::vector<Param*> out;
    for (Param* p : params()) {
        if (network_of(*p) == network) out.push_back(p);
    }
    return out;
}

void ModelBundle::set_all_trainable(bool v) {
    for (auto& [k, flag] : trainable_) flag = v;
}

std::string ModelBundle::network_digest(const std::string& network) const {
    Fnv1a h;
    for (const Param* p : params()) {
        if (network_of(*p) != network) continue;
        h.update(p->name);
        h.update(p->value.data(), p->value.size() * sizeof(double));
    }
    return h.hex();
}

bool ModelBundle::all_finite() const {
    for (const Param* p : params()) {
        if (!p->value.all_finite()) return false;
    }
    return true;
}

Var ModelBundle::encode_content(Tape& t, Var frames) { return content_enc_.forward(t, frames); }
Var ModelBundle::decode_content(Tape& t, Var features) { return content_dec_.forward(t, features); }
Var ModelBundle::encode_motion(Tape& t, Var flow_images) { return motion_enc_.forward(t, flow_images); }
Var ModelBundle::decode_motion(Tape& t, Var features) { return motion_dec_.forward(t, features); }

Var ModelBundle::predict_motion_feature(Tape& t, std::span<const Var> window) {
    if (static_cast<int>(window.size()) != context_len_ - 1) {
        throw std::invalid_argument("predict_motion_feature: window must have length t-1 = " +
                                    std::to_string(context_len_ - 1));
    }
    return predictor_.forward(t, window);
}

Var ModelBundle::shuffle_discriminate(Tape& t, std::span<const Var> seq) {
    return shuffle_disc_.forward(t, seq);
}

Var ModelBundle::discriminate_frame(Tape& t, Var frames) { return frame_disc_.forward(t, frames); }

Var ModelBundle::generate_frame(Tape& t, Var content, Var motion) {
    return generator_.forward(t, ad::concat_cols(content, motion));
}

Tensor ModelBundle::encode_content(const Tensor& frames) {
    Tape t;
    return t.value(encode_content(t, t.constant(frames)));
}

Tensor ModelBundle::decode_content(const Tensor& features) {
    Tape t;
    return t.value(decode_content(t, t.constant(features)));
}

Tensor ModelBundle::encode_motion(const Tensor& flow_images) {
    Tape t;
    return t.value(encode_motion(t, t.constant(flow_images)));
}

Tensor ModelBundle::decode_motion(const Tensor& features) {
    Tape t;
    return t.value(decode_motion(t, t.constant(features)));
}

double ModelBundle::shuffle_discriminate(std::span<const Tensor> seq) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(seq.size());
    for (const Tensor& s : seq) vars.push_back(t.constant(s));
    return t.value(shuffle_discriminate(t, vars)).item();
}

double ModelBundle::discriminate_frame(const Tensor& frame) {
    Tape t;
    Tensor batch = frame.rank() == 2 ? frame.reshaped({1, 1, frame.dim(0), frame.dim(1)}) : frame;
    return t.value(discriminate_frame(t, t.constant(batch))).item();
}

// ---- rollout --------------------------------------------------------------------------

RolloutVars rollout_on_tape(Tape& t, ModelBundle& bundle, std::span<const Var> context_frames,
                            std::span<const Var> context_flow_images, int horizon) {
    if (context_frames.size() < 3) {
        throw std::invalid_argument("rollout: need at least 3 context frames");
    }
    if (context_flow_images.size() + 1 != context_frames.size()) {
        throw std::invalid_argument("rollout: want one flow image per adjacent frame pair");
    }
    if (horizon < 1) throw std::invalid_argument("rollout: horizon must be >= 1");

    RolloutVars out;
    out.content = bundle.encode_content(t, context_frames.back());
    std::vector<Var> window;
    window.reserve(context_flow_images.size());
    for (const Var& m : context_flow_images) window.push_back(bundle.encode_motion(t, m));
    for (int i = 0; i < horizon; ++i) {
        Var predicted = bundle.predictor().forward(t, window);
        out.features.push_back(predicted);
        out.frames.push_back(bundle.generate_frame(t, out.content, predicted));
        window.erase(window.begin());
        window.push_back(predicted);
    }
    return out;
}

RolloutTrace rollout(ModelBundle& bundle, std::span<const Tensor> context_frames,
                     std::span<const Tensor> context_flow_images, int horizon) {
    Tape t;
    std::vector<Var> frames, flows;
    for (const Tensor& f : context_frames) {
        frames.push_back(t.constant(f.rank() == 2 ? f.reshaped({1, 1, f.dim(0), f.dim(1)}) : f));
    }
    for (const Tensor& m : context_flow_images) {
        flows.push_back(t.constant(m.rank() == 3 ? m.reshaped({1, m.dim(0), m.dim(1), m.dim(2)}) : m));
    }
    RolloutVars vars = rollout_on_tape(t, bundle, frames, flows, horizon);
    RolloutTrace trace;
    for (const Var& f : vars.frames) trace.frames.push_back(frame_from_batch(t.value(f), 0));
    for (const Var& h : vars.features) trace.predicted_features.push_back(t.value(h));
    return trace;
}

// ---- packing ----------------------------------------------------------------------------

Tensor stack_frames(std::span<const Tensor> frames) {
    if (frames.empty()) throw std::invalid_argument("stack_frames: empty input");
    const int h = frames[0].dim(0), w = frames[0].dim(1);
    Tensor out({static_cast<int>(frames.size()), 1, h, w});
    size_t pos = 0;
    for (const Tensor& f : frames) {
        if (f.rank() != 2 || f.dim(0) != h || f.dim(1) != w) {
            throw std::invalid_argument("stack_frames: inconsistent frame shapes");
        }
        for (size_t i = 0; i < f.size(); ++i) out[pos++] = f[i];
    }
    return out;
}

Tensor stack_flow_images(std::span<const Tensor> images) {
    if (images.empty()) throw std::invalid_argument("stack_flow_images: empty input");
    const int c = images[0].dim(0), h = images[0].dim(1), w = images[0].dim(2);
    Tensor out({static_cast<int>(images.size()), c, h, w});
    size_t pos = 0;
    for (const Tensor& f : images) {
        if (f.rank() != 3 || f.dim(0) != c || f.dim(1) != h || f.dim(2) != w) {
            throw std::invalid_argument("stack_flow_images: inconsistent shapes");
        }
        for (size_t i = 0; i < f.size(); ++i) out[pos++] = f[i];
    }
    return out;
}

Tensor frame_from_batch(const Tensor& batch, int index) {
    if (batch.rank() != 4 || batch.dim(1) != 1) {
        throw std::invalid_argument("frame_from_batch: want (N,1,H,W)");
    }
    const int h = batch.dim(2), w = batch.dim(3);
    Tensor out({h, w});
    const size_t base = static_cast<size_t>(index) * h * w;
    for (int i = 0; i < h * w; ++i) out[static_cast<size_t>(i)] = batch[base + static_cast<size_t>(i)];
    return out;
}

}  // namespace framecast::model
