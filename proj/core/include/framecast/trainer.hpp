#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "framecast/flow.hpp"
#include "framecast/losses.hpp"
#include "framecast/nets.hpp"
#include "framecast/types.hpp"

namespace framecast::train {

enum class Stage { content, motion, gan, finetune };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);
inline constexpr Stage kSchedule[4] = {Stage::content, Stage::motion, Stage::gan,
                                       Stage::finetune};

struct TrainConfig {
    Stage stage = Stage::content;
    int epochs = 50;
    int batch_size = 4;
    double lr = 1e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    int context_len = 10;
    int horizon = 10;
    losses::LossWeights weights;
    model::NetConfig net;
    flow::ProviderKind flow_kind = flow::ProviderKind::analytic;
    flow::BlockMatchParams bm;
    double flow_bound = 0.0;  // 0 = resolve to manifest speed_max + 1
    int frame_h = 0, frame_w = 0;  // resolved from the dataset manifest
    int checkpoint_every = 0;      // epochs; 0 = checkpoint only at stage end
    double early_stop_rel = 1e-4;
    int early_stop_window = 5;

    void validate() const;
    // Canonical JSON; `stage` is serialized but excluded from the digest so one
    // schedule shares a digest across its stages.
    std::string to_json_string() const;
    static TrainConfig from_json_string(const std::string& text);
    std::string digest() const;
};

// ---- train log ----------------------------------------------------------------

struct TrainRecord {
    Stage stage;
    int epoch = 0;
    int step = 0;
    std::string loss_name;
    double value = 0.0;
    double wall_time_sec = 0.0;
    std::string rng_digest;
};

struct TrainLog {
    std::vector<TrainRecord> records;

    void add(Stage stage, int epoch, int step, const std::string& name, double value,
             double wall_sec, const std::string& rng_digest);
    // Schema: stage,epoch,step,loss_name,value
    void write_csv(const std::filesystem::path& path) const;
    void write_summary_json(const std::filesystem::path& path) const;
    std::vector<double> series(const std::string& loss_name) const;
    double epoch_mean(const std::string& loss_name, int epoch) const;
    int max_epoch() const;
};

// Raised when a loss goes non-finite; message records stage/epoch/step.
class NanLossError : public std::runtime_error {
public:
    NanLossError(Stage stage, int epoch, int step);
    Stage stage;
    int epoch, step;
};

// ---- ADAM ----------------------------------------------------------------------

struct AdamState {
    Tensor m, v;
    long step = 0;
};

// Standard bias-corrected update; state is created on first use.
void adam_step(Tensor& params, const Tensor& grads, AdamState& state, double lr, double beta1,
               double beta2, double eps);

class AdamOptimizer {
public:
    AdamOptimizer(double lr, double beta1, double beta2, double eps)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // One step over every parameter of the listed networks that is marked
    // trainable; frozen networks stay bit-identical.
    void step(model::ModelBundle& bundle, ad::Tape& tape,
              const std::vector<std::string>& networks);

private:
    double lr_, beta1_, beta2_, eps_;
    std::map<const Param*, AdamState> state_;
};

// ---- data preparation -------------------------------------------------------------

struct PreparedClip {
    int clip_id = 0;
    std::vector<Tensor> frames;       // T x (H,W)
    std::vector<Tensor> flow_images;  // T-1 x (2,H,W), normalized to [0,1]
};

struct PreparedData {
    std::vector<PreparedClip> clips;
    double flow_bound = 0.0;
    int frame_h = 0, frame_w = 0;
};

PreparedData prepare_data(const Dataset& ds, const flow::FlowProvider& provider,
                          double flow_bound);

// ---- training ------------------------------------------------------------------------

// Runs one stage of the schedule on the bundle in place. Stage rules:
//   content:  updates E_c, G_c on lambda1*consistency + lambda2*content_rec
//   motion:   alternates an SD classifier step with a predictor step updating
//             E_m, G_m, f_lstm on lambda3*(-log SD(S_pred)) + lambda4*motion_rec
//   gan:      E_c/E_m (and the rest) frozen; alternates D and G steps on the
//             adversarial + l1 objective
//   finetune: everything trainable; alternates D+SD steps with a step on all
//             other networks over the full objective
TrainLog train_stage(model::ModelBundle& bundle, const PreparedData& data,
                     const TrainConfig& config,
                     const std::function<void(const model::ModelBundle&, int)>& on_epoch_end =
                         nullptr);

// content -> motion -> gan -> finetune with a checkpoint after each stage.
// Existing stage checkpoints with a matching config digest are reused, which
// makes the schedule resumable; parameters round-trip through the checkpoint
// encoding at every stage boundary so resumed and uninterrupted runs agree.
model::ModelBundle run_schedule(const Dataset& ds, const TrainConfig& config,
                                const std::filesystem::path& ckpt_dir,
                                std::map<std::string, TrainLog>* logs_out = nullptr);

// ---- checkpoints ------------------------------------------------------------------------

void save_bundle(const model::ModelBundle& bundle, const TrainConfig& config,
                 const std::filesystem::path& dir);
std::pair<model::ModelBundle, TrainConfig> load_bundle(const std::filesystem::path& dir);
// Overwrites parameter values from a checkpoint written with the same config.
void load_params_into(model::ModelBundle& bundle, const std::filesystem::path& dir);

// Fraction of held-out predicted sequences whose natural order scores > 0.5
// and whose shuffled copy scores < 0.5.
double sd_order_accuracy(model::ModelBundle& bundle, const PreparedData& data,
                         const std::vector<int>& clip_indices, Rng& rng);

}  // namespace framecast::train
