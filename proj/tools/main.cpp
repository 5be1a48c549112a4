#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "framecast/eval.hpp"
#include "framecast/formats.hpp"
#include "framecast/synth.hpp"
#include "framecast/trainer.hpp"

using namespace framecast;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void print_resolved(const std::string& command, const json& config) {
    std::printf("%s\n", json{{"command", command}, {"config", config}}.dump().c_str());
}

std::string clip_dir_name(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05d", id);
    return buf;
}

std::string pred_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pred_%03d.pgm", i);
    return buf;
}

// ---- gen-data -----------------------------------------------------------------

struct GenDataOpts {
    std::string out;
    int clips = 64;
    int frames = 20;
    int size = 64;
    int sprites = 2;
    int sprite_size = 16;
    double speed_max = 3.0;
    uint64_t seed = 0;
    bool subpixel = false;
    bool solid = false;
    bool textured = false;
    std::string preset;
};

int run_gen_data(const GenDataOpts& opt) {
    synth::ClipConfig cfg;
    cfg.height = opt.size;
    cfg.width = opt.size;
    cfg.frames = opt.frames;
    cfg.n_sprites = opt.sprites;
    cfg.sprite_size = opt.sprite_size;
    cfg.speed_max = opt.speed_max;
    cfg.integer_velocities = !opt.subpixel;
    if (opt.subpixel) cfg.speed_min = 0.5;
    cfg.textured = !opt.solid;

    print_resolved("gen-data", json{{"out", opt.out},
                                    {"clips", opt.clips},
                                    {"frames", cfg.frames},
                                    {"size", cfg.height},
                                    {"sprites", cfg.n_sprites},
                                    {"sprite_size", cfg.sprite_size},
                                    {"speed_max", cfg.speed_max},
                                    {"subpixel", opt.subpixel},
                                    {"textured", cfg.textured},
                                    {"seed", opt.seed}});
    const Dataset ds = synth::generate_dataset(cfg, opt.clips, opt.seed);
    synth::write_dataset(ds, opt.out);
    const auto back = synth::read_dataset(opt.out);
    std::printf("wrote %d clips (%dx%d, %d frames) to %s\n", opt.clips, cfg.height, cfg.width,
                cfg.frames, opt.out.c_str());
    std::printf("dataset checksum %s\n", back.manifest.checksum.c_str());
    return kExitOk;
}

// ---- train / ablate -------------------------------------------------------------

// Parsed command-line values live here; they are folded into the TrainConfig
// after the config file and preset, so explicit flags always win.
struct TrainFlags {
    std::string data, ckpt, stage = "all", config_file, preset, flow;
    int epochs = 0, batch = 0, context = 0, horizon = 0, bm_patch = 0, bm_radius = 0;
    int width = 0, latent = 0, ckpt_every = -1;
    double lr = 0, lambda1 = 0, lambda2 = 0, lambda3 = 0, lambda4 = 0;
    double alpha = 0, beta = 0, delta = 0, flow_bound = 0;
    uint64_t seed = 0;
};

void add_train_options(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--data", f.data, "dataset directory")->required();
    cmd->add_option("--ckpt", f.ckpt, "checkpoint directory")->required();
    cmd->add_option("--stage", f.stage, "content|motion|gan|finetune|all")
        ->check(CLI::IsMember({"content", "motion", "gan", "finetune", "all"}));
    cmd->add_option("--epochs", f.epochs)->check(CLI::PositiveNumber);
    cmd->add_option("--batch", f.batch)->check(CLI::PositiveNumber);
    cmd->add_option("--lr", f.lr)->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed);
    cmd->add_option("--context", f.context)->check(CLI::Range(3, 100));
    cmd->add_option("--horizon", f.horizon)->check(CLI::Range(3, 100));
    cmd->add_option("--lambda1", f.lambda1)->check(CLI::NonNegativeNumber);
    cmd->add_option("--lambda2", f.lambda2)->check(CLI::NonNegativeNumber);
    cmd->add_option("--lambda3", f.lambda3)->check(CLI::NonNegativeNumber);
    cmd->add_option("--lambda4", f.lambda4)->check(CLI::NonNegativeNumber);
    cmd->add_option("--alpha", f.alpha)->check(CLI::NonNegativeNumber);
    cmd->add_option("--beta", f.beta)->check(CLI::NonNegativeNumber);
    cmd->add_option("--delta", f.delta)->check(CLI::PositiveNumber);
    cmd->add_option("--flow", f.flow, "analytic|block")
        ->check(CLI::IsMember({"analytic", "block"}));
    cmd->add_option("--bm-patch", f.bm_patch)->check(CLI::Range(3, 33));
    cmd->add_option("--bm-radius", f.bm_radius)->check(CLI::PositiveNumber);
    cmd->add_option("--flow-bound", f.flow_bound)->check(CLI::PositiveNumber);
    cmd->add_option("--width", f.width, "base channel width")->check(CLI::PositiveNumber);
    cmd->add_option("--latent", f.latent, "latent dimension")->check(CLI::PositiveNumber);
    cmd->add_option("--ckpt-every", f.ckpt_every, "periodic checkpoint cadence (epochs)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--config", f.config_file, "JSON config file; explicit flags win");
    cmd->add_option("--preset", f.preset, "micro: 32x32, 1 sprite, t=10, k=3, width 4")
        ->check(CLI::IsMember({"micro"}));
}

train::TrainConfig resolve_train_config(const CLI::App* cmd, const TrainFlags& f) {
    train::TrainConfig cfg;
    if (cmd->count("--config") > 0) {
        const auto bytes = formats::read_file(f.config_file);
        cfg = train::TrainConfig::from_json_string(std::string(bytes.begin(), bytes.end()));
    }
    if (f.preset == "micro") {
        cfg.net.base_width = 4;
        cfg.context_len = 10;
        cfg.horizon = 3;
    }
    auto given = [&](const char* name) { return cmd->count(name) > 0; };
    if (given("--epochs")) cfg.epochs = f.epochs;
    if (given("--batch")) cfg.batch_size = f.batch;
    if (given("--lr")) cfg.lr = f.lr;
    if (given("--seed")) cfg.seed = f.seed;
    if (given("--context")) cfg.context_len = f.context;
    if (given("--horizon")) cfg.horizon = f.horizon;
    if (given("--lambda1")) cfg.weights.lambda1 = f.lambda1;
    if (given("--lambda2")) cfg.weights.lambda2 = f.lambda2;
    if (given("--lambda3")) cfg.weights.lambda3 = f.lambda3;
    if (given("--lambda4")) cfg.weights.lambda4 = f.lambda4;
    if (given("--alpha")) cfg.weights.alpha = f.alpha;
    if (given("--beta")) cfg.weights.beta = f.beta;
    if (given("--delta")) cfg.weights.delta = f.delta;
    if (given("--flow")) cfg.flow_kind = flow::provider_kind_from_string(f.flow);
    if (given("--bm-patch")) cfg.bm.patch = f.bm_patch;
    if (given("--bm-radius")) cfg.bm.radius = f.bm_radius;
    if (given("--flow-bound")) cfg.flow_bound = f.flow_bound;
    if (given("--width")) cfg.net.base_width = f.width;
    if (given("--latent")) cfg.net.latent_dim = f.latent;
    if (given("--ckpt-every")) cfg.checkpoint_every = f.ckpt_every;
    return cfg;
}

int run_train(const CLI::App* cmd, const TrainFlags& flags, bool ablation) {
    const std::string command = ablation ? "ablate" : "train";
    const Dataset ds = synth::read_dataset(flags.data);
    train::TrainConfig cfg = resolve_train_config(cmd, flags);
    cfg.frame_h = ds.manifest.height;
    cfg.frame_w = ds.manifest.width;
    if (cfg.flow_bound <= 0.0) cfg.flow_bound = ds.manifest.speed_max + 1.0;
    if (ablation) cfg.weights.lambda3 = 0.0;
    cfg.validate();

    print_resolved(command, json{{"data", flags.data},
                                 {"ckpt", flags.ckpt},
                                 {"stage", flags.stage},
                                 {"train", json::parse(cfg.to_json_string())},
                                 {"config_digest", cfg.digest()},
                                 {"seed", cfg.seed}});
    if (ablation) std::printf("ablation: shuffle weight lambda3 forced to 0\n");

    if (flags.stage == "all") {
        (void)train::run_schedule(ds, cfg, flags.ckpt, nullptr);
        std::printf("schedule complete; checkpoints in %s\n", flags.ckpt.c_str());
        return kExitOk;
    }

    cfg.stage = train::stage_from_string(flags.stage);
    const auto provider = flow::make_provider(cfg.flow_kind, cfg.bm);
    const auto prepared = train::prepare_data(ds, *provider, cfg.flow_bound);

    model::ModelBundle bundle(cfg.net, cfg.frame_h, cfg.frame_w, cfg.seed, cfg.context_len,
                              cfg.horizon);
    static const std::map<std::string, std::string> kPrereq = {
        {"motion", "stage_content"}, {"gan", "stage_motion"}, {"finetune", "stage_gan"}};
    if (const auto it = kPrereq.find(flags.stage); it != kPrereq.end()) {
        const fs::path prev = fs::path(flags.ckpt) / it->second;
        if (!fs::exists(prev / "header.json")) {
            throw std::runtime_error("missing prerequisite checkpoint " + prev.string() +
                                     " for stage " + flags.stage);
        }
        train::load_params_into(bundle, prev);
    }
    const auto log = train::train_stage(bundle, prepared, cfg);
    fs::create_directories(flags.ckpt);
    log.write_csv(fs::path(flags.ckpt) / ("train_log_" + flags.stage + ".csv"));
    log.write_summary_json(fs::path(flags.ckpt) / ("train_summary_" + flags.stage + ".json"));
    train::save_bundle(bundle, cfg, fs::path(flags.ckpt) / ("stage_" + flags.stage));
    std::printf("stage %s complete; checkpoint in %s/stage_%s\n", flags.stage.c_str(),
                flags.ckpt.c_str(), flags.stage.c_str());
    return kExitOk;
}

// ---- predict ----------------------------------------------------------------------

struct PredictOpts {
    std::string ckpt, data, out;
    int context = 0, horizon = 0;  // 0 = take from the checkpoint config
    int limit = 0;                 // 0 = all clips
};

int run_predict(const PredictOpts& opt) {
    auto [bundle, cfg] = train::load_bundle(opt.ckpt);
    const Dataset ds = synth::read_dataset(opt.data);
    const int t = opt.context > 0 ? opt.context : cfg.context_len;
    const int k = opt.horizon > 0 ? opt.horizon : cfg.horizon;
    if (ds.manifest.frames_per_clip < t + k) {
        throw std::runtime_error("clips are shorter than context+horizon");
    }
    print_resolved("predict", json{{"ckpt", opt.ckpt},
                                   {"data", opt.data},
                                   {"out", opt.out},
                                   {"context", t},
                                   {"horizon", k},
                                   {"seed", cfg.seed}});
    const auto provider = flow::make_provider(cfg.flow_kind, cfg.bm);
    fs::create_directories(opt.out);

    json clip_ids = json::array();
    const size_t n_clips = opt.limit > 0
                               ? std::min(ds.clips.size(), static_cast<size_t>(opt.limit))
                               : ds.clips.size();
    for (size_t c = 0; c < n_clips; ++c) {
        const VideoClip& clip = ds.clips[c];
        std::vector<Tensor> ctx(clip.frames.begin(), clip.frames.begin() + t);
        std::vector<Tensor> flows;
        for (int j = 0; j + 1 < t; ++j) {
            flows.push_back(
                flow::flow_to_image(provider->flow(ds, static_cast<int>(c), j), cfg.flow_bound));
        }
        const auto trace = model::rollout(bundle, ctx, flows, k);
        const fs::path cdir = fs::path(opt.out) / clip_dir_name(clip.clip_id);
        fs::create_directories(cdir);
        for (int i = 0; i < k; ++i) {
            formats::write_pgm(cdir / pred_name(i + 1), trace.frames[static_cast<size_t>(i)]);
        }
        std::vector<Tensor> gt(clip.frames.begin() + t, clip.frames.begin() + t + k);
        eval::write_grid(cdir / "grid.pgm", ctx, trace.frames, gt);
        clip_ids.push_back(clip.clip_id);
    }
    const json manifest{{"context_len", t}, {"horizon", k}, {"clips", clip_ids}};
    const std::string text = manifest.dump(2) + "\n";
    formats::write_file(fs::path(opt.out) / "predictions.json",
                        std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
    std::printf("wrote predictions for %zu clips to %s\n", n_clips, opt.out.c_str());
    return kExitOk;
}

// ---- eval --------------------------------------------------------------------------

struct EvalOpts {
    std::string ckpt, pred, data, out;
    int context = 0, horizon = 0;
};

int run_eval(const EvalOpts& opt) {
    const Dataset ds = synth::read_dataset(opt.data);
    fs::create_directories(opt.out);
    eval::MetricSeries series;
    int t = opt.context, k = opt.horizon;

    if (!opt.pred.empty()) {
        const auto bytes = formats::read_file(fs::path(opt.pred) / "predictions.json");
        const json manifest = json::parse(bytes.begin(), bytes.end());
        if (t == 0) t = manifest.at("context_len").get<int>();
        if (k == 0) k = manifest.at("horizon").get<int>();
        print_resolved("eval", json{{"pred", opt.pred},
                                    {"data", opt.data},
                                    {"out", opt.out},
                                    {"context", t},
                                    {"horizon", k}});
        std::map<int, std::vector<Tensor>> preds;
        for (const auto& id : manifest.at("clips")) {
            const fs::path cdir = fs::path(opt.pred) / clip_dir_name(id.get<int>());
            std::vector<Tensor> frames;
            for (int i = 1; i <= k; ++i) frames.push_back(formats::read_pgm(cdir / pred_name(i)));
            preds[id.get<int>()] = std::move(frames);
        }
        series = eval::evaluate_predictions(preds, ds, t, k);
    } else {
        auto [bundle, cfg] = train::load_bundle(opt.ckpt);
        if (t == 0) t = cfg.context_len;
        if (k == 0) k = cfg.horizon;
        print_resolved("eval", json{{"ckpt", opt.ckpt},
                                    {"data", opt.data},
                                    {"out", opt.out},
                                    {"context", t},
                                    {"horizon", k},
                                    {"seed", cfg.seed}});
        const auto provider = flow::make_provider(cfg.flow_kind, cfg.bm);
        series = eval::evaluate(bundle, ds, *provider, cfg.flow_bound, t, k);
    }

    eval::write_metrics_csv(series, fs::path(opt.out) / "metrics.csv");
    eval::write_summary_json(series, fs::path(opt.out) / "summary.json");
    for (const auto& s : series.aggregate()) {
        std::printf(
            "horizon %d: psnr %.4f dB (median %.4f), ssim %.6f (median %.6f) over %d clips\n",
            s.horizon, s.psnr_mean, s.psnr_median, s.ssim_mean, s.ssim_median, s.count);
    }
    std::printf("metrics in %s\n", (fs::path(opt.out) / "metrics.csv").string().c_str());
    return kExitOk;
}

// ---- inspect --------------------------------------------------------------------------

int run_inspect(const std::string& path) {
    print_resolved("inspect", json{{"path", path}});
    if (fs::exists(fs::path(path) / "manifest.json")) {
        const auto ds = synth::read_dataset(path);
        const json j{{"kind", "dataset"},
                     {"clips", ds.manifest.clip_count},
                     {"frames_per_clip", ds.manifest.frames_per_clip},
                     {"height", ds.manifest.height},
                     {"width", ds.manifest.width},
                     {"sprites_per_clip", ds.manifest.sprites_per_clip},
                     {"speed_max", ds.manifest.speed_max},
                     {"seed", ds.manifest.seed},
                     {"checksum", ds.manifest.checksum}};
        std::printf("%s\n", j.dump(2).c_str());
        return kExitOk;
    }
    if (fs::exists(fs::path(path) / "header.json")) {
        const auto header = formats::read_checkpoint_header(path);
        uint64_t bytes = 0;
        for (const auto& e : header.entries) bytes += e.length;
        const json j{{"kind", "checkpoint"},
                     {"format_version", header.format_version},
                     {"config_digest", header.config_digest},
                     {"seed", header.seed},
                     {"parameters", header.entries.size()},
                     {"parameter_bytes", bytes},
                     {"config", json::parse(header.config_json)}};
        std::printf("%s\n", j.dump(2).c_str());
        return kExitOk;
    }
    throw std::runtime_error(path + ": neither a dataset nor a checkpoint directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"future-frame video prediction on synthetic moving sprites"};
    app.require_subcommand(1);

    GenDataOpts gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a moving-sprite dataset");
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--clips", gen.clips)->check(CLI::PositiveNumber);
    gen_cmd->add_option("--frames", gen.frames)->check(CLI::Range(3, 1000));
    gen_cmd->add_option("--size", gen.size)->check(CLI::Range(16, 512));
    gen_cmd->add_option("--sprites", gen.sprites)->check(CLI::Range(1, 16));
    gen_cmd->add_option("--sprite-size", gen.sprite_size)->check(CLI::Range(2, 256));
    gen_cmd->add_option("--speed-max", gen.speed_max)->check(CLI::PositiveNumber);
    gen_cmd->add_option("--seed", gen.seed);
    gen_cmd->add_flag("--subpixel", gen.subpixel, "sub-pixel positions and velocities");
    gen_cmd->add_flag("--solid", gen.solid, "single-brightness glyphs instead of textured ones");
    gen_cmd->add_flag("--textured", gen.textured, "force textured glyphs (overrides the preset)");
    gen_cmd->add_option("--preset", gen.preset, "micro: 32x32, 1 solid sprite, 13 frames")
        ->check(CLI::IsMember({"micro"}));

    TrainFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "run the staged training schedule");
    add_train_options(train_cmd, train_flags);

    TrainFlags ablate_flags;
    auto* ablate_cmd =
        app.add_subcommand("ablate", "train with the shuffle weight forced to zero");
    add_train_options(ablate_cmd, ablate_flags);

    PredictOpts pr;
    auto* pred_cmd = app.add_subcommand("predict", "roll out future frames and image grids");
    pred_cmd->add_option("--ckpt", pr.ckpt)->required();
    pred_cmd->add_option("--data", pr.data)->required();
    pred_cmd->add_option("--out", pr.out)->required();
    pred_cmd->add_option("--context", pr.context)->check(CLI::Range(3, 100));
    pred_cmd->add_option("--horizon", pr.horizon)->check(CLI::PositiveNumber);
    pred_cmd->add_option("--limit", pr.limit, "only the first N clips")
        ->check(CLI::NonNegativeNumber);

    EvalOpts ev;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM per horizon, CSV + JSON summary");
    auto* ckpt_opt = eval_cmd->add_option("--ckpt", ev.ckpt, "evaluate a checkpoint");
    auto* pred_opt = eval_cmd->add_option("--pred", ev.pred, "evaluate stored predictions");
    ckpt_opt->excludes(pred_opt);
    pred_opt->excludes(ckpt_opt);
    eval_cmd->add_option("--data", ev.data)->required();
    eval_cmd->add_option("--out", ev.out)->required();
    eval_cmd->add_option("--context", ev.context)->check(CLI::Range(3, 100));
    eval_cmd->add_option("--horizon", ev.horizon)->check(CLI::PositiveNumber);

    std::string inspect_path;
    auto* inspect_cmd = app.add_subcommand("inspect", "describe a dataset or checkpoint");
    inspect_cmd->add_option("--path", inspect_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) {
            if (gen.preset == "micro") {
                if (gen_cmd->count("--size") == 0) gen.size = 32;
                if (gen_cmd->count("--sprites") == 0) gen.sprites = 1;
                if (gen_cmd->count("--frames") == 0) gen.frames = 13;
                if (gen_cmd->count("--sprite-size") == 0) gen.sprite_size = 12;
                if (!gen.textured) gen.solid = true;
            }
            return run_gen_data(gen);
        }
        if (train_cmd->parsed()) return run_train(train_cmd, train_flags, /*ablation=*/false);
        if (ablate_cmd->parsed()) return run_train(ablate_cmd, ablate_flags, /*ablation=*/true);
        if (pred_cmd->parsed()) return run_predict(pr);
        if (eval_cmd->parsed()) {
            if (ev.ckpt.empty() == ev.pred.empty()) {
                std::fprintf(stderr, "eval: exactly one of --ckpt or --pred is required\n");
                return kExitUsage;
            }
            return run_eval(ev);
        }
        if (inspect_cmd->parsed()) return run_inspect(inspect_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
