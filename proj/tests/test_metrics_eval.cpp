#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "framecast/eval.hpp"
#include "framecast/formats.hpp"
#include "framecast/synth.hpp"
#include "test_util.hpp"

using namespace framecast;
using testutil::random_image;
namespace fs = std::filesystem;

namespace {

// Direct per-window SSIM with explicit Gaussian weights, the oracle for the
// separable-filter implementation.
double ssim_bruteforce(const Tensor& a, const Tensor& b, int win) {
    const int h = a.dim(0), w = a.dim(1);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    std::vector<double> k(static_cast<size_t>(win));
    const int half = win / 2;
    double ksum = 0.0;
    for (int i = 0; i < win; ++i) {
        const double x = i - half;
        k[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        ksum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= ksum;

    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + win <= h; ++y) {
        for (int x = 0; x + win <= w; ++x) {
            double ma = 0, mb = 0, va = 0, vb = 0, cab = 0;
            for (int i = 0; i < win; ++i) {
                for (int j = 0; j < win; ++j) {
                    const double wgt = k[static_cast<size_t>(i)] * k[static_cast<size_t>(j)];
                    ma += wgt * a.at(y + i, x + j);
                    mb += wgt * b.at(y + i, x + j);
                    va += wgt * a.at(y + i, x + j) * a.at(y + i, x + j);
                    vb += wgt * b.at(y + i, x + j) * b.at(y + i, x + j);
                    cab += wgt * a.at(y + i, x + j) * b.at(y + i, x + j);
                }
            }
            va -= ma * ma;
            vb -= mb * mb;
            cab -= ma * mb;
            acc += ((2 * ma * mb + c1) * (2 * cab + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    }
    return acc / count;
}

Dataset tiny_dataset(int clips = 3) {
    synth::ClipConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.frames = 7;
    cfg.n_sprites = 1;
    cfg.sprite_size = 6;
    cfg.speed_max = 2.0;
    return synth::generate_dataset(cfg, clips, 23);
}

}  // namespace

TEST_CASE("psnr oracles") {
    Rng rng(41);
    const Tensor img = random_image(8, 8, rng);
    CHECK(eval::psnr(img, img) == 100.0);

    // constant offset 0.1 -> mse 0.01 -> exactly 20 dB
    Tensor off = img;
    const Tensor zeros = Tensor::zeros({8, 8});
    Tensor tenth = Tensor::full({8, 8}, 0.1);
    CHECK(eval::psnr(tenth, zeros) == doctest::Approx(20.0).epsilon(1e-12));

    // mse 0.25 -> 10*log10(4)
    Tensor half = Tensor::full({8, 8}, 0.5);
    CHECK(eval::psnr(half, zeros) == doctest::Approx(6.020599913279624).epsilon(1e-9));

    CHECK_THROWS_AS((void)eval::psnr(img, random_image(8, 7, rng)), std::invalid_argument);
    CHECK_THROWS_AS((void)eval::psnr(img, img, 0.0), std::invalid_argument);

    // strictly decreasing in mse
    double prev = 1e9;
    for (double step : {0.05, 0.1, 0.2, 0.4}) {
        const double p = eval::psnr(Tensor::full({8, 8}, step), zeros);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim oracles and properties") {
    Rng rng(42);
    const Tensor a = random_image(16, 16, rng);
    const Tensor b = random_image(16, 16, rng);

    CHECK(eval::ssim(a, a) == 1.0);  // exact
    CHECK(eval::ssim(a, b) == doctest::Approx(eval::ssim(b, a)).epsilon(1e-12));
    CHECK(eval::ssim(a, b) >= -1.0);
    CHECK(eval::ssim(a, b) <= 1.0);

    // brute-force window oracle, window clipped to 11 on 16x16
    CHECK(eval::ssim(a, b) == doctest::Approx(ssim_bruteforce(a, b, 11)).epsilon(1e-10));
    CHECK(eval::ssim(a, b, 7) == doctest::Approx(ssim_bruteforce(a, b, 7)).epsilon(1e-10));

    // constant images collapse to the luminance term
    const double c1v = 0.3, c2v = 0.6;
    const Tensor ca = Tensor::full({16, 16}, c1v);
    const Tensor cb = Tensor::full({16, 16}, c2v);
    const double c1 = 0.01 * 0.01;
    const double expected = (2 * c1v * c2v + c1) / (c1v * c1v + c2v * c2v + c1);
    CHECK(eval::ssim(ca, cb) == doctest::Approx(expected).epsilon(1e-12));

    // window is clipped for small images rather than failing
    const Tensor small = random_image(8, 8, rng);
    CHECK(eval::ssim(small, small) == 1.0);
    CHECK_THROWS_AS((void)eval::ssim(a, random_image(8, 8, rng)), std::invalid_argument);
}

TEST_CASE("evaluate_predictions: identity predictor saturates both metrics") {
    const Dataset ds = tiny_dataset();
    const int t = 4, k = 3;
    std::map<int, std::vector<Tensor>> preds;
    for (const auto& clip : ds.clips) {
        std::vector<Tensor> p(clip.frames.begin() + t, clip.frames.begin() + t + k);
        preds[clip.clip_id] = p;
    }
    const auto series = eval::evaluate_predictions(preds, ds, t, k);
    REQUIRE(series.rows.size() == ds.clips.size() * static_cast<size_t>(k));
    for (const auto& r : series.rows) {
        CHECK(r.psnr_db == 100.0);
        CHECK(r.ssim == 1.0);
    }
    const auto stats = series.aggregate();
    REQUIRE(stats.size() == 3);  // horizons 1..k, contiguous
    for (int i = 0; i < 3; ++i) CHECK(stats[static_cast<size_t>(i)].horizon == i + 1);
}

TEST_CASE("evaluate_predictions matches per-frame metric computation") {
    const Dataset ds = tiny_dataset();
    const int t = 4, k = 3;
    std::map<int, std::vector<Tensor>> preds;
    for (const auto& clip : ds.clips) {
        preds[clip.clip_id] =
            std::vector<Tensor>(static_cast<size_t>(k), Tensor::full({16, 16}, 0.5));
    }
    const auto series = eval::evaluate_predictions(preds, ds, t, k);
    for (const auto& r : series.rows) {
        const auto& clip = ds.clips[static_cast<size_t>(r.clip_id)];
        const Tensor& gt = clip.frames[static_cast<size_t>(t + r.horizon - 1)];
        const Tensor pred = Tensor::full({16, 16}, 0.5);
        CHECK(r.psnr_db == doctest::Approx(eval::psnr(pred, gt)).epsilon(1e-12));
        CHECK(r.ssim == doctest::Approx(eval::ssim(pred, gt)).epsilon(1e-12));
    }
}

TEST_CASE("evaluate: order independence of the aggregates") {
    const Dataset ds = tiny_dataset(4);
    Dataset reversed = ds;
    std::reverse(reversed.clips.begin(), reversed.clips.end());
    std::reverse(reversed.flows.begin(), reversed.flows.end());

    model::NetConfig net;
    net.base_width = 2;
    net.latent_dim = 4;
    net.rnn_hidden = 8;
    model::ModelBundle bundle(net, 16, 16, 3, 4, 3);
    const auto provider = flow::make_provider(flow::ProviderKind::analytic);
    const auto s1 = eval::evaluate(bundle, ds, *provider, 3.0, 4, 3);
    const auto s2 = eval::evaluate(bundle, reversed, *provider, 3.0, 4, 3);
    const auto a1 = s1.aggregate();
    const auto a2 = s2.aggregate();
    REQUIRE(a1.size() == a2.size());
    for (size_t i = 0; i < a1.size(); ++i) {
        CHECK(a1[i].psnr_mean == doctest::Approx(a2[i].psnr_mean).epsilon(1e-12));
        CHECK(a1[i].ssim_mean == doctest::Approx(a2[i].ssim_mean).epsilon(1e-12));
    }

    SUBCASE("csv layout") {
        const auto dir = fs::temp_directory_path() / "framecast_eval_csv";
        fs::remove_all(dir);
        fs::create_directories(dir);
        eval::write_metrics_csv(s1, dir / "m.csv");
        const auto bytes = formats::read_file(dir / "m.csv");
        const std::string text(bytes.begin(), bytes.end());
        CHECK(text.substr(0, 28) == "clip_id,horizon,psnr_db,ssim");
        size_t lines = 0;
        for (char c : text) lines += c == '\n' ? 1 : 0;
        CHECK(lines == 1 + s1.rows.size());
        eval::write_summary_json(s1, dir / "m.json");
        CHECK(fs::exists(dir / "m.json"));
    }
}

TEST_CASE("evaluate rejects clips shorter than context+horizon") {
    const Dataset ds = tiny_dataset();
    model::NetConfig net;
    net.base_width = 2;
    net.latent_dim = 4;
    net.rnn_hidden = 8;
    model::ModelBundle bundle(net, 16, 16, 3, 4, 3);
    const auto provider = flow::make_provider(flow::ProviderKind::analytic);
    CHECK_THROWS_AS((void)eval::evaluate(bundle, ds, *provider, 3.0, 5, 3),
                    std::invalid_argument);
}

TEST_CASE("render_grid: exact layout arithmetic and byte determinism") {
    Rng rng(44);
    const int h = 10, w = 12, gutter = 2;
    std::vector<Tensor> ctx, gt, pred;
    for (int i = 0; i < 5; ++i) ctx.push_back(random_image(h, w, rng));
    for (int i = 0; i < 4; ++i) gt.push_back(random_image(h, w, rng));
    for (int i = 0; i < 4; ++i) pred.push_back(random_image(h, w, rng));

    const Tensor grid = eval::render_grid(ctx, pred, gt, gutter);
    CHECK(grid.dim(1) == 4 * (w + gutter));  // max(3, 4, 4) cells wide
    CHECK(grid.dim(0) == 3 * (h + gutter));

    // context row shows first, middle, last
    CHECK(grid.at(0, 0) == ctx[0].at(0, 0));
    CHECK(grid.at(0, (w + gutter)) == ctx[2].at(0, 0));
    CHECK(grid.at(0, 2 * (w + gutter)) == ctx[4].at(0, 0));
    CHECK(grid.at(h + gutter, 0) == gt[0].at(0, 0));
    CHECK(grid.at(2 * (h + gutter), 0) == pred[0].at(0, 0));

    const auto dir = fs::temp_directory_path() / "framecast_grid";
    fs::remove_all(dir);
    fs::create_directories(dir);
    eval::write_grid(dir / "a.pgm", ctx, pred, gt, gutter);
    eval::write_grid(dir / "b.pgm", ctx, pred, gt, gutter);
    CHECK(formats::read_file(dir / "a.pgm") == formats::read_file(dir / "b.pgm"));
}

TEST_CASE("quantization clamps and is exact on the 8-bit grid") {
    CHECK(quantize8(-0.5) == 0);
    CHECK(quantize8(2.0) == 255);
    for (int k = 0; k <= 255; ++k) {
        CHECK(quantize8(dequantize8(static_cast<uint8_t>(k))) == k);
    }
}

TEST_CASE("noisier predictions never raise the mean psnr") {
    Rng rng(45);
    const Dataset ds = tiny_dataset(4);
    const int t = 4, k = 3;
    double prev_mean = 1e18;
    for (double noise : {0.0, 0.05, 0.15, 0.4}) {
        std::map<int, std::vector<Tensor>> preds;
        for (const auto& clip : ds.clips) {
            std::vector<Tensor> p;
            for (int i = 0; i < k; ++i) {
                Tensor f = clip.frames[static_cast<size_t>(t + i)];
                for (size_t j = 0; j < f.size(); ++j) {
                    f[j] = std::clamp(f[j] + rng.uniform(-noise, noise), 0.0, 1.0);
                }
                p.push_back(std::move(f));
            }
            preds[clip.clip_id] = std::move(p);
        }
        const auto series = eval::evaluate_predictions(preds, ds, t, k);
        double mean = 0.0;
        for (const auto& r : series.rows) mean += r.psnr_db;
        mean /= static_cast<double>(series.rows.size());
        CHECK(mean <= prev_mean);
        prev_mean = mean;
    }
}
