#include "framecast/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "framecast/formats.hpp"
#include "framecast/hash.hpp"

namespace framecast::train {

using ad::Tape;
using ad::Var;
using nlohmann::json;

std::string to_string(Stage s) {
    switch (s) {
        case Stage::content: return "content";
        case Stage::motion: return "motion";
        case Stage::gan: return "gan";
        case Stage::finetune: return "finetune";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "content") return Stage::content;
    if (s == "motion") return Stage::motion;
    if (s == "gan") return Stage::gan;
    if (s == "finetune") return Stage::finetune;
    throw std::invalid_argument("unknown stage '" + s + "'");
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("train config: learning rate must be positive");
    if (epochs < 1 || batch_size < 1) {
        throw std::invalid_argument("train config: epochs and batch size must be >= 1");
    }
    if (context_len < 3) throw std::invalid_argument("train config: context length must be >= 3");
    if (horizon < 3) throw std::invalid_argument("train config: horizon must be >= 3");
    if (adam_beta1 <= 0 || adam_beta1 >= 1 || adam_beta2 <= 0 || adam_beta2 >= 1 || adam_eps <= 0) {
        throw std::invalid_argument("train config: bad ADAM constants");
    }
    weights.validate();
    net.validate();
}

namespace {

json config_to_json(const TrainConfig& c, bool include_stage) {
    json j{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"adam", {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}},
           {"seed", c.seed},
           {"context_len", c.context_len},
           {"horizon", c.horizon},
           {"weights",
            {{"lambda1", c.weights.lambda1},
             {"lambda2", c.weights.lambda2},
             {"lambda3", c.weights.lambda3},
             {"lambda4", c.weights.lambda4},
             {"alpha", c.weights.alpha},
             {"beta", c.weights.beta},
             {"delta", c.weights.delta}}},
           {"net",
            {{"conv_layers", c.net.conv_layers},
             {"fc_layers", c.net.fc_layers},
             {"base_width", c.net.base_width},
             {"latent_dim", c.net.latent_dim},
             {"leaky_slope", c.net.leaky_slope},
             {"rnn_layers", c.net.rnn_layers},
             {"rnn_hidden", c.net.rnn_hidden}}},
           {"flow",
            {{"kind", flow::to_string(c.flow_kind)},
             {"bm_patch", c.bm.patch},
             {"bm_radius", c.bm.radius},
             {"bound", c.flow_bound}}},
           {"frame", {{"h", c.frame_h}, {"w", c.frame_w}}},
           {"checkpoint_every", c.checkpoint_every},
           {"early_stop", {{"rel", c.early_stop_rel}, {"window", c.early_stop_window}}}};
    if (include_stage) j["stage"] = to_string(c.stage);
    return j;
}

}  // namespace

std::string TrainConfig::to_json_string() const {
    return config_to_json(*this, /*include_stage=*/true).dump();
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument("train config: invalid JSON");
    TrainConfig c;
    try {
        if (j.contains("stage")) c.stage = stage_from_string(j.at("stage").get<std::string>());
        c.epochs = j.at("epochs").get<int>();
        c.batch_size = j.at("batch_size").get<int>();
        c.lr = j.at("lr").get<double>();
        c.adam_beta1 = j.at("adam").at("beta1").get<double>();
        c.adam_beta2 = j.at("adam").at("beta2").get<double>();
        c.adam_eps = j.at("adam").at("eps").get<double>();
        c.seed = j.at("seed").get<uint64_t>();
        c.context_len = j.at("context_len").get<int>();
        c.horizon = j.at("horizon").get<int>();
        const auto& w = j.at("weights");
        c.weights.lambda1 = w.at("lambda1").get<double>();
        c.weights.lambda2 = w.at("lambda2").get<double>();
        c.weights.lambda3 = w.at("lambda3").get<double>();
        c.weights.lambda4 = w.at("lambda4").get<double>();
        c.weights.alpha = w.at("alpha").get<double>();
        c.weights.beta = w.at("beta").get<double>();
        c.weights.delta = w.at("delta").get<double>();
        const auto& n = j.at("net");
        c.net.conv_layers = n.at("conv_layers").get<int>();
        c.net.fc_layers = n.at("fc_layers").get<int>();
        c.net.base_width = n.at("base_width").get<int>();
        c.net.latent_dim = n.at("latent_dim").get<int>();
        c.net.leaky_slope = n.at("leaky_slope").get<double>();
        c.net.rnn_layers = n.at("rnn_layers").get<int>();
        c.net.rnn_hidden = n.at("rnn_hidden").get<int>();
        const auto& f = j.at("flow");
        c.flow_kind = flow::provider_kind_from_string(f.at("kind").get<std::string>());
        c.bm.patch = f.at("bm_patch").get<int>();
        c.bm.radius = f.at("bm_radius").get<int>();
        c.flow_bound = f.at("bound").get<double>();
        c.frame_h = j.at("frame").at("h").get<int>();
        c.frame_w = j.at("frame").at("w").get<int>();
        c.checkpoint_every = j.at("checkpoint_every").get<int>();
        c.early_stop_rel = j.at("early_stop").at("rel").get<double>();
        c.early_stop_window = j.at("early_stop").at("window").get<int>();
    } catch (const json::exception& ex) {
        throw std::invalid_argument(std::string("train config: ") + ex.what());
    }
    return c;
}

std::string TrainConfig::digest() const {
    return fnv1a_hex(config_to_json(*this, /*include_stage=*/false).dump());
}

// ---- train log ---------------------------------------------------------------

void TrainLog::add(Stage stage, int epoch, int step, const std::string& name, double value,
                   double wall_sec, const std::string& rng_digest) {
    records.push_back(TrainRecord{stage, epoch, step, name, value, wall_sec, rng_digest});
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    formats::CsvWriter csv(path, "stage,epoch,step,loss_name,value");
    for (const auto& r : records) {
        csv.row({to_string(r.stage), std::to_string(r.epoch), std::to_string(r.step), r.loss_name,
                 formats::CsvWriter::fmt(r.value, 17)});
    }
    csv.close();
}

void TrainLog::write_summary_json(const std::filesystem::path& path) const {
    json by_loss = json::object();
    const int last = max_epoch();
    std::map<std::string, bool> names;
    for (const auto& r : records) names[r.loss_name] = true;
    for (const auto& [name, _] : names) {
        by_loss[name] = {{"last_epoch_mean", epoch_mean(name, last)},
                         {"final", series(name).empty() ? 0.0 : series(name).back()}};
    }
    double wall = records.empty() ? 0.0 : records.back().wall_time_sec;
    json j{{"epochs", last}, {"wall_time_sec", wall}, {"losses", by_loss}};
    const std::string text = j.dump(2) + "\n";
    formats::write_file(path,
                        std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

std::vector<double> TrainLog::series(const std::string& loss_name) const {
    std::vector<double> out;
    for (const auto& r : records) {
        if (r.loss_name == loss_name) out.push_back(r.value);
    }
    return out;
}

double TrainLog::epoch_mean(const std::string& loss_name, int epoch) const {
    double s = 0.0;
    int n = 0;
    for (const auto& r : records) {
        if (r.loss_name == loss_name && r.epoch == epoch) {
            s += r.value;
            ++n;
        }
    }
    return n == 0 ? 0.0 : s / n;
}

int TrainLog::max_epoch() const {
    int e = 0;
    for (const auto& r : records) e = std::max(e, r.epoch);
    return e;
}

NanLossError::NanLossError(Stage stage_, int epoch_, int step_)
    : std::runtime_error("non-finite loss at stage=" + to_string(stage_) +
                         " epoch=" + std::to_string(epoch_) + " step=" + std::to_string(step_)),
      stage(stage_),
      epoch(epoch_),
      step(step_) {}

// ---- ADAM -----------------------------------------------------------------------

void adam_step(Tensor& params, const Tensor& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    if (!params.same_shape(grads)) throw std::invalid_argument("adam_step: shape mismatch");
    if (state.m.empty()) {
        state.m = Tensor(params.shape());
        state.v = Tensor(params.shape());
    } else if (!state.m.same_shape(params)) {
        throw std::invalid_argument("adam_step: state shape mismatch");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void AdamOptimizer::step(model::ModelBundle& bundle, Tape& tape,
                         const std::vector<std::string>& networks) {
    for (Param* p : bundle.params()) {
        const std::string net = model::ModelBundle::network_of(*p);
        bool listed = false;
        for (const auto& n : networks) {
            if (n == net) {
                listed = true;
                break;
            }
        }
        if (!listed || !bundle.trainable(net)) continue;
        adam_step(p->value, tape.grad_of(*p), state_[p], lr_, beta1_, beta2_, eps_);
    }
}

// ---- data preparation ----------------------------------------------------------------

PreparedData prepare_data(const Dataset& ds, const flow::FlowProvider& provider,
                          double flow_bound) {
    if (flow_bound <= 0.0) throw std::invalid_argument("prepare_data: flow bound must be positive");
    PreparedData out;
    out.flow_bound = flow_bound;
    out.frame_h = ds.manifest.height;
    out.frame_w = ds.manifest.width;
    for (size_t c = 0; c < ds.clips.size(); ++c) {
        PreparedClip pc;
        pc.clip_id = ds.clips[c].clip_id;
        pc.frames = ds.clips[c].frames;
        const int T = ds.clips[c].length();
        for (int idx = 0; idx + 1 < T; ++idx) {
            pc.flow_images.push_back(
                flow::flow_to_image(provider.flow(ds, static_cast<int>(c), idx), flow_bound));
        }
        out.clips.push_back(std::move(pc));
    }
    return out;
}

// ---- stage runner ----------------------------------------------------------------------

namespace {

Tensor batch_frames(const PreparedData& d, std::span<const int> batch, int frame_idx) {
    const int h = d.frame_h, w = d.frame_w;
    Tensor out({static_cast<int>(batch.size()), 1, h, w});
    size_t pos = 0;
    for (int ci : batch) {
        const Tensor& f = d.clips[static_cast<size_t>(ci)].frames[static_cast<size_t>(frame_idx)];
        for (size_t i = 0; i < f.size(); ++i) out[pos++] = f[i];
    }
    return out;
}

Tensor batch_flow_images(const PreparedData& d, std::span<const int> batch, int flow_idx) {
    const int h = d.frame_h, w = d.frame_w;
    Tensor out({static_cast<int>(batch.size()), 2, h, w});
    size_t pos = 0;
    for (int ci : batch) {
        const Tensor& f =
            d.clips[static_cast<size_t>(ci)].flow_images[static_cast<size_t>(flow_idx)];
        for (size_t i = 0; i < f.size(); ++i) out[pos++] = f[i];
    }
    return out;
}

// Context frames of all batch clips, clip-major: (B*t, 1, H, W).
Tensor batch_context_block(const PreparedData& d, std::span<const int> batch, int t) {
    const int h = d.frame_h, w = d.frame_w;
    Tensor out({static_cast<int>(batch.size()) * t, 1, h, w});
    size_t pos = 0;
    for (int ci : batch) {
        for (int j = 0; j < t; ++j) {
            const Tensor& f = d.clips[static_cast<size_t>(ci)].frames[static_cast<size_t>(j)];
            for (size_t i = 0; i < f.size(); ++i) out[pos++] = f[i];
        }
    }
    return out;
}

// Flow images [from, from+count) of all batch clips, clip-major: (B*count,2,H,W).
Tensor batch_flow_block(const PreparedData& d, std::span<const int> batch, int from, int count) {
    const int h = d.frame_h, w = d.frame_w;
    Tensor out({static_cast<int>(batch.size()) * count, 2, h, w});
    size_t pos = 0;
    for (int ci : batch) {
        for (int j = 0; j < count; ++j) {
            const Tensor& f =
                d.clips[static_cast<size_t>(ci)].flow_images[static_cast<size_t>(from + j)];
            for (size_t i = 0; i < f.size(); ++i) out[pos++] = f[i];
        }
    }
    return out;
}

// (B,1,H,W) steps -> (B*k,1,H,W), step-major.
Var stack_step_vars(Tape& t, std::span<const Var> steps, int channels, int h, int w) {
    std::vector<Var> flat;
    flat.reserve(steps.size());
    for (const Var& s : steps) {
        flat.push_back(ad::reshape(s, {t.value(s).dim(0), channels * h * w}));
    }
    Var stacked = ad::concat_rows(flat);
    return ad::reshape(stacked, {t.value(stacked).dim(0), channels, h, w});
}

struct StageRunner {
    model::ModelBundle& bundle;
    const PreparedData& data;
    const TrainConfig& cfg;
    Rng rng;
    AdamOptimizer opt;
    TrainLog log;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    int step_counter = 0;
    int cur_epoch = 0;

    StageRunner(model::ModelBundle& b, const PreparedData& d, const TrainConfig& c)
        : bundle(b),
          data(d),
          cfg(c),
          rng(Rng::mix(c.seed, 0x53544147ULL + static_cast<uint64_t>(c.stage))),
          opt(c.lr, c.adam_beta1, c.adam_beta2, c.adam_eps) {}

    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    double checked(Var v) const {
        const double x = v.value().item();
        if (!std::isfinite(x)) throw NanLossError(cfg.stage, cur_epoch, step_counter);
        return x;
    }

    void emit(const std::string& name, double value) {
        log.add(cfg.stage, cur_epoch, step_counter, name, value, elapsed(), rng.state_digest());
        if (!std::isfinite(value)) throw NanLossError(cfg.stage, cur_epoch, step_counter);
    }

    std::vector<int> epoch_order() {
        std::vector<int> order(data.clips.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.uniform_int(0, i));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        return order;
    }

    // Encodes context flows and rolls the predictor k steps; returns the
    // predicted (B,d) features.
    std::vector<Var> predict_features(Tape& tape, std::span<const int> batch) {
        const int t = cfg.context_len, k = cfg.horizon;
        std::vector<Var> window;
        window.reserve(static_cast<size_t>(t - 1));
        for (int j = 0; j < t - 1; ++j) {
            window.push_back(
                bundle.encode_motion(tape, tape.constant(batch_flow_images(data, batch, j))));
        }
        std::vector<Var> preds;
        preds.reserve(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) {
            Var p = bundle.predictor().forward(tape, window);
            preds.push_back(p);
            window.erase(window.begin());
            window.push_back(p);
        }
        return preds;
    }

    // Per-clip sequences of (1,d) features drawn from (B,d) step tensors.
    std::vector<Var> clip_sequence(Tape&, std::span<const Var> preds, int row, bool detach) {
        std::vector<Var> seq;
        seq.reserve(preds.size());
        for (const Var& p : preds) {
            Var r = ad::gather_rows(p, {row});
            seq.push_back(detach ? ad::stop_gradient(r) : r);
        }
        return seq;
    }

    void content_step(std::span<const int> batch) {
        const int t = cfg.context_len;
        Tape tape;
        Var x = tape.constant(batch_context_block(data, batch, t));
        Var feats = bundle.encode_content(tape, x);
        std::vector<Var> clip_feats;
        clip_feats.reserve(batch.size());
        for (size_t b = 0; b < batch.size(); ++b) {
            std::vector<int> rows(static_cast<size_t>(t));
            for (int j = 0; j < t; ++j) rows[static_cast<size_t>(j)] = static_cast<int>(b) * t + j;
            clip_feats.push_back(ad::gather_rows(feats, rows));
        }
        Var cons = losses::batch_consistency(clip_feats, cfg.weights.delta);
        Var rec = losses::mse(bundle.decode_content(tape, feats), x);
        Var content = ad::add(ad::affine(cons, cfg.weights.lambda1, 0.0),
                              ad::affine(rec, cfg.weights.lambda2, 0.0));
        tape.backward(content);
        emit("consistency", checked(cons));
        emit("content_rec", checked(rec));
        emit("content", checked(content));
        opt.step(bundle, tape, {"E_c", "G_c"});
    }

    void motion_step(std::span<const int> batch) {
        const int t = cfg.context_len, k = cfg.horizon;
        std::vector<std::vector<int>> perms;
        perms.reserve(batch.size());
        for (size_t b = 0; b < batch.size(); ++b) {
            perms.push_back(losses::random_non_identity_permutation(k, rng));
        }

        // SD classifier step on detached predictions.
        double shuffle_value = 0.0;
        {
            Tape tape;
            std::vector<Var> preds = predict_features(tape, batch);
            Var total;
            for (size_t b = 0; b < batch.size(); ++b) {
                auto ordered = clip_sequence(tape, preds, static_cast<int>(b), /*detach=*/true);
                auto shuffled = losses::apply_permutation(ordered, perms[b]);
                Var term = losses::real_fake_bce(bundle.shuffle_discriminate(tape, ordered),
                                                 bundle.shuffle_discriminate(tape, shuffled));
                total = total.valid() ? ad::add(total, term) : term;
            }
            Var sd_loss = ad::affine(total, 1.0 / static_cast<double>(batch.size()), 0.0);
            tape.backward(sd_loss);
            shuffle_value = checked(sd_loss);
            opt.step(bundle, tape, {"SD"});
        }

        // Predictor step: the ordered-score gradient flows into f_lstm/E_m.
        {
            Tape tape;
            std::vector<Var> preds = predict_features(tape, batch);
            Var pred_term;
            for (size_t b = 0; b < batch.size(); ++b) {
                auto ordered = clip_sequence(tape, preds, static_cast<int>(b), /*detach=*/false);
                Var term = losses::bce_real(bundle.shuffle_discriminate(tape, ordered));
                pred_term = pred_term.valid() ? ad::add(pred_term, term) : term;
            }
            pred_term = ad::affine(pred_term, 1.0 / static_cast<double>(batch.size()), 0.0);
            Var future = tape.constant(batch_flow_block(data, batch, t - 1, k));
            Var rec = losses::mse(
                bundle.decode_motion(tape, bundle.encode_motion(tape, future)), future);
            Var objective = ad::add(ad::affine(pred_term, cfg.weights.lambda3, 0.0),
                                    ad::affine(rec, cfg.weights.lambda4, 0.0));
            tape.backward(objective);
            const double rec_v = checked(rec);
            emit("shuffle", shuffle_value);
            emit("motion_rec", rec_v);
            emit("motion", cfg.weights.lambda3 * shuffle_value + cfg.weights.lambda4 * rec_v);
            opt.step(bundle, tape, {"E_m", "G_m", "f_lstm"});
        }
    }

    // Builds context vars and rolls out future frames; shared by gan/finetune.
    struct RolloutBatch {
        model::RolloutVars vars;
        Var fake;  // (B*k,1,H,W)
        Var real;  // (B*k,1,H,W)
    };

    RolloutBatch rollout_batch(Tape& tape, std::span<const int> batch) {
        const int t = cfg.context_len, k = cfg.horizon;
        std::vector<Var> ctx_frames, ctx_flows;
        for (int j = 0; j < t; ++j) {
            ctx_frames.push_back(tape.constant(batch_frames(data, batch, j)));
        }
        for (int j = 0; j < t - 1; ++j) {
            ctx_flows.push_back(tape.constant(batch_flow_images(data, batch, j)));
        }
        RolloutBatch rb;
        rb.vars = model::rollout_on_tape(tape, bundle, ctx_frames, ctx_flows, k);
        rb.fake = stack_step_vars(tape, rb.vars.frames, 1, data.frame_h, data.frame_w);
        std::vector<Var> real_steps;
        real_steps.reserve(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) {
            real_steps.push_back(tape.constant(batch_frames(data, batch, t + i)));
        }
        rb.real = stack_step_vars(tape, real_steps, 1, data.frame_h, data.frame_w);
        return rb;
    }

    void gan_step(std::span<const int> batch) {
        double d_value = 0.0;
        {
            Tape tape;
            RolloutBatch rb = rollout_batch(tape, batch);
            Var d_loss = losses::real_fake_bce(
                bundle.discriminate_frame(tape, rb.real),
                bundle.discriminate_frame(tape, ad::stop_gradient(rb.fake)));
            tape.backward(d_loss);
            d_value = checked(d_loss);
            opt.step(bundle, tape, {"D"});
        }
        {
            Tape tape;
            RolloutBatch rb = rollout_batch(tape, batch);
            Var g_adv = losses::bce_real(bundle.discriminate_frame(tape, rb.fake));
            Var l1v = losses::l1(rb.fake, rb.real);
            Var g_loss = ad::add(ad::affine(g_adv, cfg.weights.alpha, 0.0),
                                 ad::affine(l1v, cfg.weights.beta, 0.0));
            tape.backward(g_loss);
            const double l1_value = checked(l1v);
            emit("adv_d", d_value);
            emit("adv_g", checked(g_adv));
            emit("frame_l1", l1_value);
            emit("generate", cfg.weights.alpha * d_value + cfg.weights.beta * l1_value);
            opt.step(bundle, tape, {"G"});
        }
    }

    void finetune_step(std::span<const int> batch) {
        const int t = cfg.context_len, k = cfg.horizon;
        std::vector<std::vector<int>> perms;
        perms.reserve(batch.size());
        for (size_t b = 0; b < batch.size(); ++b) {
            perms.push_back(losses::random_non_identity_permutation(k, rng));
        }

        double d_value = 0.0, shuffle_value = 0.0;
        {
            Tape tape;
            RolloutBatch rb = rollout_batch(tape, batch);
            Var d_loss = losses::real_fake_bce(
                bundle.discriminate_frame(tape, rb.real),
                bundle.discriminate_frame(tape, ad::stop_gradient(rb.fake)));
            Var sd_total;
            for (size_t b = 0; b < batch.size(); ++b) {
                auto ordered =
                    clip_sequence(tape, rb.vars.features, static_cast<int>(b), /*detach=*/true);
                auto shuffled = losses::apply_permutation(ordered, perms[b]);
                Var term = losses::real_fake_bce(bundle.shuffle_discriminate(tape, ordered),
                                                 bundle.shuffle_discriminate(tape, shuffled));
                sd_total = sd_total.valid() ? ad::add(sd_total, term) : term;
            }
            Var sd_loss = ad::affine(sd_total, 1.0 / static_cast<double>(batch.size()), 0.0);
            Var adversaries = ad::add(d_loss, sd_loss);
            tape.backward(adversaries);
            d_value = checked(d_loss);
            shuffle_value = checked(sd_loss);
            opt.step(bundle, tape, {"D", "SD"});
        }
        {
            Tape tape;
            RolloutBatch rb = rollout_batch(tape, batch);
            Var x = tape.constant(batch_context_block(data, batch, t));
            Var feats = bundle.encode_content(tape, x);
            std::vector<Var> clip_feats;
            for (size_t b = 0; b < batch.size(); ++b) {
                std::vector<int> rows(static_cast<size_t>(t));
                for (int j = 0; j < t; ++j) {
                    rows[static_cast<size_t>(j)] = static_cast<int>(b) * t + j;
                }
                clip_feats.push_back(ad::gather_rows(feats, rows));
            }
            Var cons = losses::batch_consistency(clip_feats, cfg.weights.delta);
            Var crec = losses::mse(bundle.decode_content(tape, feats), x);

            Var pred_term;
            for (size_t b = 0; b < batch.size(); ++b) {
                auto ordered =
                    clip_sequence(tape, rb.vars.features, static_cast<int>(b), /*detach=*/false);
                Var term = losses::bce_real(bundle.shuffle_discriminate(tape, ordered));
                pred_term = pred_term.valid() ? ad::add(pred_term, term) : term;
            }
            pred_term = ad::affine(pred_term, 1.0 / static_cast<double>(batch.size()), 0.0);
            Var future = tape.constant(batch_flow_block(data, batch, t - 1, k));
            Var mrec = losses::mse(
                bundle.decode_motion(tape, bundle.encode_motion(tape, future)), future);

            Var g_adv = losses::bce_real(bundle.discriminate_frame(tape, rb.fake));
            Var l1v = losses::l1(rb.fake, rb.real);

            Var objective = ad::add(
                ad::add(ad::add(ad::affine(cons, cfg.weights.lambda1, 0.0),
                                ad::affine(crec, cfg.weights.lambda2, 0.0)),
                        ad::add(ad::affine(pred_term, cfg.weights.lambda3, 0.0),
                                ad::affine(mrec, cfg.weights.lambda4, 0.0))),
                ad::add(ad::affine(g_adv, cfg.weights.alpha, 0.0),
                        ad::affine(l1v, cfg.weights.beta, 0.0)));
            tape.backward(objective);

            const double cons_v = checked(cons), crec_v = checked(crec);
            const double mrec_v = checked(mrec), l1_v = checked(l1v), gadv_v = checked(g_adv);
            const double content_v = cfg.weights.lambda1 * cons_v + cfg.weights.lambda2 * crec_v;
            const double motion_v =
                cfg.weights.lambda3 * shuffle_value + cfg.weights.lambda4 * mrec_v;
            const double generate_v = cfg.weights.alpha * d_value + cfg.weights.beta * l1_v;
            emit("consistency", cons_v);
            emit("content_rec", crec_v);
            emit("shuffle", shuffle_value);
            emit("motion_rec", mrec_v);
            emit("adv_d", d_value);
            emit("adv_g", gadv_v);
            emit("frame_l1", l1_v);
            emit("content", content_v);
            emit("motion", motion_v);
            emit("generate", generate_v);
            emit("total", content_v + motion_v + generate_v);
            opt.step(bundle, tape, {"E_c", "G_c", "E_m", "G_m", "f_lstm", "G"});
        }
    }

    void set_stage_flags() {
        bundle.set_all_trainable(false);
        switch (cfg.stage) {
            case Stage::content:
                bundle.set_trainable("E_c", true);
                bundle.set_trainable("G_c", true);
                break;
            case Stage::motion:
                bundle.set_trainable("E_m", true);
                bundle.set_trainable("G_m", true);
                bundle.set_trainable("f_lstm", true);
                bundle.set_trainable("SD", true);
                break;
            case Stage::gan:
                bundle.set_trainable("G", true);
                bundle.set_trainable("D", true);
                break;
            case Stage::finetune:
                bundle.set_all_trainable(true);
                break;
        }
    }

    const char* primary_loss() const {
        switch (cfg.stage) {
            case Stage::content: return "content";
            case Stage::motion: return "motion";
            case Stage::gan: return "generate";
            case Stage::finetune: return "total";
        }
        return "total";
    }

    TrainLog run(const std::function<void(const model::ModelBundle&, int)>& on_epoch_end) {
        set_stage_flags();
        std::vector<double> epoch_means;
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            cur_epoch = epoch;
            const auto order = epoch_order();
            for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch_size)) {
                const size_t end = std::min(order.size(), pos + static_cast<size_t>(cfg.batch_size));
                std::span<const int> batch(order.data() + pos, end - pos);
                ++step_counter;
                switch (cfg.stage) {
                    case Stage::content: content_step(batch); break;
                    case Stage::motion: motion_step(batch); break;
                    case Stage::gan: gan_step(batch); break;
                    case Stage::finetune: finetune_step(batch); break;
                }
            }
            if (on_epoch_end) on_epoch_end(bundle, epoch);
            epoch_means.push_back(log.epoch_mean(primary_loss(), epoch));
            const int w = cfg.early_stop_window;
            if (w > 0 && static_cast<int>(epoch_means.size()) > w) {
                const double prev = epoch_means[epoch_means.size() - 1 - static_cast<size_t>(w)];
                const double cur = epoch_means.back();
                const double rel = (prev - cur) / std::max(std::abs(prev), 1e-12);
                if (rel < cfg.early_stop_rel) break;
            }
        }
        return std::move(log);
    }
};

}  // namespace

TrainLog train_stage(model::ModelBundle& bundle, const PreparedData& data,
                     const TrainConfig& config,
                     const std::function<void(const model::ModelBundle&, int)>& on_epoch_end) {
    config.validate();
    if (data.clips.empty()) throw std::invalid_argument("train_stage: no clips");
    const int need = config.context_len + config.horizon;
    for (const auto& c : data.clips) {
        if (static_cast<int>(c.frames.size()) < need) {
            throw std::invalid_argument("train_stage: clip " + std::to_string(c.clip_id) +
                                        " shorter than context+horizon");
        }
    }
    if (data.frame_h != bundle.frame_h() || data.frame_w != bundle.frame_w()) {
        throw std::invalid_argument("train_stage: bundle/data frame size mismatch");
    }
    StageRunner runner(bundle, data, config);
    return runner.run(on_epoch_end);
}

// ---- checkpoints -------------------------------------------------------------------

void save_bundle(const model::ModelBundle& bundle, const TrainConfig& config,
                 const std::filesystem::path& dir) {
    formats::CheckpointHeader header;
    header.format_version = 1;
    header.config_digest = config.digest();
    header.seed = config.seed;
    header.config_json = config.to_json_string();
    std::vector<Tensor> tensors;
    for (const Param* p : bundle.params()) {
        formats::BlobEntry e;
        e.name = p->name;
        e.dtype = "f32";
        e.shape = p->value.shape();
        header.entries.push_back(std::move(e));
        tensors.push_back(p->value);
    }
    formats::write_checkpoint(dir, header, tensors);
}

std::pair<model::ModelBundle, TrainConfig> load_bundle(const std::filesystem::path& dir) {
    auto [header, tensors] = formats::read_checkpoint(dir);
    TrainConfig cfg = TrainConfig::from_json_string(header.config_json);
    model::ModelBundle bundle(cfg.net, cfg.frame_h, cfg.frame_w, cfg.seed, cfg.context_len,
                              cfg.horizon);
    const auto& params = bundle.params();
    if (params.size() != tensors.size()) {
        throw formats::FormatError(dir.string() + ": parameter count mismatch");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (header.entries[i].name != params[i]->name ||
            !(params[i]->value.shape() == header.entries[i].shape)) {
            throw formats::FormatError(dir.string() + ": parameter layout mismatch at '" +
                                       header.entries[i].name + "'");
        }
        params[i]->value = std::move(tensors[i]);
    }
    return {std::move(bundle), std::move(cfg)};
}

void load_params_into(model::ModelBundle& bundle, const std::filesystem::path& dir) {
    auto [header, tensors] = formats::read_checkpoint(dir);
    const auto& params = bundle.params();
    if (params.size() != tensors.size()) {
        throw formats::FormatError(dir.string() + ": parameter count mismatch");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (header.entries[i].name != params[i]->name ||
            !(params[i]->value.shape() == header.entries[i].shape)) {
            throw formats::FormatError(dir.string() + ": parameter layout mismatch at '" +
                                       header.entries[i].name + "'");
        }
        params[i]->value = std::move(tensors[i]);
    }
}

model::ModelBundle run_schedule(const Dataset& ds, const TrainConfig& config,
                                const std::filesystem::path& ckpt_dir,
                                std::map<std::string, TrainLog>* logs_out) {
    TrainConfig resolved = config;
    resolved.frame_h = ds.manifest.height;
    resolved.frame_w = ds.manifest.width;
    if (resolved.flow_bound <= 0.0) resolved.flow_bound = ds.manifest.speed_max + 1.0;
    resolved.validate();

    const auto provider = flow::make_provider(resolved.flow_kind, resolved.bm);
    const PreparedData prepared = prepare_data(ds, *provider, resolved.flow_bound);

    model::ModelBundle bundle(resolved.net, resolved.frame_h, resolved.frame_w, resolved.seed,
                              resolved.context_len, resolved.horizon);
    std::filesystem::create_directories(ckpt_dir);

    for (Stage stage : kSchedule) {
        TrainConfig stage_cfg = resolved;
        stage_cfg.stage = stage;
        const auto stage_dir = ckpt_dir / ("stage_" + to_string(stage));
        if (std::filesystem::exists(stage_dir / "header.json")) {
            const auto header = formats::read_checkpoint_header(stage_dir);
            if (header.config_digest != stage_cfg.digest()) {
                throw std::runtime_error("resume: config digest mismatch at " + stage_dir.string());
            }
            load_params_into(bundle, stage_dir);
            continue;
        }
        std::function<void(const model::ModelBundle&, int)> periodic;
        if (stage_cfg.checkpoint_every > 0) {
            periodic = [&, stage](const model::ModelBundle& b, int epoch) {
                if (epoch % stage_cfg.checkpoint_every == 0) {
                    save_bundle(b, stage_cfg,
                                ckpt_dir / ("stage_" + to_string(stage) + "_epoch" +
                                            std::to_string(epoch)));
                }
            };
        }
        TrainLog log = train_stage(bundle, prepared, stage_cfg, periodic);
        log.write_csv(ckpt_dir / ("train_log_" + to_string(stage) + ".csv"));
        log.write_summary_json(ckpt_dir / ("train_summary_" + to_string(stage) + ".json"));
        save_bundle(bundle, stage_cfg, stage_dir);
        // Round-trip through the float32 encoding so resumed runs match.
        load_params_into(bundle, stage_dir);
        if (logs_out) (*logs_out)[to_string(stage)] = std::move(log);
    }
    return bundle;
}

double sd_order_accuracy(model::ModelBundle& bundle, const PreparedData& data,
                         const std::vector<int>& clip_indices, Rng& rng) {
    const int t = bundle.context_len(), k = bundle.horizon();
    int correct = 0, total = 0;
    for (int ci : clip_indices) {
        const auto& clip = data.clips.at(static_cast<size_t>(ci));
        Tape tape;
        std::vector<Var> window;
        for (int j = 0; j < t - 1; ++j) {
            const Tensor& m = clip.flow_images[static_cast<size_t>(j)];
            window.push_back(bundle.encode_motion(
                tape, tape.constant(m.reshaped({1, m.dim(0), m.dim(1), m.dim(2)}))));
        }
        std::vector<Var> ordered;
        for (int i = 0; i < k; ++i) {
            Var p = bundle.predictor().forward(tape, window);
            ordered.push_back(p);
            window.erase(window.begin());
            window.push_back(p);
        }
        const auto perm = losses::random_non_identity_permutation(k, rng);
        const auto shuffled = losses::apply_permutation(ordered, perm);
        const double p_ord = tape.value(bundle.shuffle_discriminate(tape, ordered)).item();
        const double p_shuf = tape.value(bundle.shuffle_discriminate(tape, shuffled)).item();
        correct += (p_ord > 0.5 ? 1 : 0) + (p_shuf < 0.5 ? 1 : 0);
        total += 2;
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

}  // namespace framecast::train
