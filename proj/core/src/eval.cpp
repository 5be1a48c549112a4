#include "framecast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "framecast/formats.hpp"

namespace framecast::eval {

using nlohmann::json;

void MetricSeries::sort() {
    std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
        return a.clip_id != b.clip_id ? a.clip_id < b.clip_id : a.horizon < b.horizon;
    });
}

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::vector<HorizonStats> MetricSeries::aggregate() const {
    std::map<int, std::vector<double>> psnrs, ssims;
    for (const auto& r : rows) {
        psnrs[r.horizon].push_back(r.psnr_db);
        ssims[r.horizon].push_back(r.ssim);
    }
    std::vector<HorizonStats> out;
    for (const auto& [h, pv] : psnrs) {
        HorizonStats s;
        s.horizon = h;
        s.count = static_cast<int>(pv.size());
        s.psnr_mean = mean_of(pv);
        s.psnr_std = std_of(pv, s.psnr_mean);
        s.psnr_median = median_of(pv);
        const auto& sv = ssims.at(h);
        s.ssim_mean = mean_of(sv);
        s.ssim_std = std_of(sv, s.ssim_mean);
        s.ssim_median = median_of(sv);
        out.push_back(s);
    }
    return out;
}

MetricSeries evaluate(model::ModelBundle& bundle, const Dataset& ds,
                      const flow::FlowProvider& provider, double flow_bound, int context_len,
                      int horizon) {
    if (context_len < 3 || horizon < 1) {
        throw std::invalid_argument("evaluate: context >= 3 and horizon >= 1 required");
    }
    MetricSeries series;
    for (size_t c = 0; c < ds.clips.size(); ++c) {
        const VideoClip& clip = ds.clips[c];
        if (clip.length() < context_len + horizon) {
            throw std::invalid_argument("evaluate: clip " + std::to_string(clip.clip_id) +
                                        " shorter than context+horizon");
        }
        std::vector<Tensor> ctx(clip.frames.begin(), clip.frames.begin() + context_len);
        std::vector<Tensor> flows;
        for (int j = 0; j + 1 < context_len; ++j) {
            flows.push_back(
                flow::flow_to_image(provider.flow(ds, static_cast<int>(c), j), flow_bound));
        }
        const auto trace = model::rollout(bundle, ctx, flows, horizon);
        for (int i = 0; i < horizon; ++i) {
            const Tensor& gt = clip.frames[static_cast<size_t>(context_len + i)];
            series.rows.push_back(MetricRow{clip.clip_id, i + 1,
                                            psnr(trace.frames[static_cast<size_t>(i)], gt),
                                            ssim(trace.frames[static_cast<size_t>(i)], gt)});
        }
    }
    series.sort();
    return series;
}

MetricSeries evaluate_predictions(const std::map<int, std::vector<Tensor>>& predictions,
                                  const Dataset& ds, int context_len, int horizon) {
    std::map<int, const VideoClip*> by_id;
    for (const auto& clip : ds.clips) by_id[clip.clip_id] = &clip;
    MetricSeries series;
    for (const auto& [clip_id, frames] : predictions) {
        const auto it = by_id.find(clip_id);
        if (it == by_id.end()) {
            throw std::invalid_argument("evaluate: predictions for unknown clip " +
                                        std::to_string(clip_id));
        }
        const VideoClip& clip = *it->second;
        if (static_cast<int>(frames.size()) != horizon || clip.length() < context_len + horizon) {
            throw std::invalid_argument("evaluate: prediction/clip length mismatch for clip " +
                                        std::to_string(clip_id));
        }
        for (int i = 0; i < horizon; ++i) {
            const Tensor& gt = clip.frames[static_cast<size_t>(context_len + i)];
            series.rows.push_back(MetricRow{clip_id, i + 1,
                                            psnr(frames[static_cast<size_t>(i)], gt),
                                            ssim(frames[static_cast<size_t>(i)], gt)});
        }
    }
    series.sort();
    return series;
}

void write_metrics_csv(const MetricSeries& series, const std::filesystem::path& path) {
    formats::CsvWriter csv(path, "clip_id,horizon,psnr_db,ssim");
    for (const auto& r : series.rows) {
        csv.row({std::to_string(r.clip_id), std::to_string(r.horizon),
                 formats::CsvWriter::fmt(r.psnr_db), formats::CsvWriter::fmt(r.ssim)});
    }
    csv.close();
}

void write_summary_json(const MetricSeries& series, const std::filesystem::path& path) {
    json horizons = json::array();
    for (const auto& s : series.aggregate()) {
        horizons.push_back({{"horizon", s.horizon},
                            {"count", s.count},
                            {"psnr", {{"mean", s.psnr_mean},
                                      {"std", s.psnr_std},
                                      {"median", s.psnr_median}}},
                            {"ssim", {{"mean", s.ssim_mean},
                                      {"std", s.ssim_std},
                                      {"median", s.ssim_median}}}});
    }
    json j{{"rows", series.rows.size()}, {"horizons", horizons}};
    const std::string text = j.dump(2) + "\n";
    formats::write_file(path,
                        std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

namespace {

// First, middle, last (deduplicated) for short rows.
std::vector<int> subsample_indices(int n, int want) {
    std::vector<int> idx;
    if (n <= want) {
        for (int i = 0; i < n; ++i) idx.push_back(i);
        return idx;
    }
    idx = {0, n / 2, n - 1};
    return idx;
}

}  // namespace

Tensor render_grid(std::span<const Tensor> context, std::span<const Tensor> predictions,
                   std::span<const Tensor> ground_truth, int gutter) {
    if (context.empty() || predictions.empty() || predictions.size() != ground_truth.size()) {
        throw std::invalid_argument("render_grid: inconsistent row lengths");
    }
    const int h = context[0].dim(0), w = context[0].dim(1);
    for (const auto& rows : {context, ground_truth, predictions}) {
        for (const Tensor& f : rows) {
            if (f.rank() != 2 || f.dim(0) != h || f.dim(1) != w) {
                throw std::invalid_argument("render_grid: inconsistent frame shapes");
            }
        }
    }
    const auto ctx_idx = subsample_indices(static_cast<int>(context.size()), 3);
    const size_t max_len = std::max(ctx_idx.size(), predictions.size());
    const int grid_w = static_cast<int>(max_len) * (w + gutter);
    const int grid_h = 3 * (h + gutter);
    Tensor grid = Tensor::full({grid_h, grid_w}, 0.1);

    auto blit = [&](const Tensor& img, int row, int col) {
        const int y0 = row * (h + gutter), x0 = col * (w + gutter);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) grid.at(y0 + y, x0 + x) = img.at(y, x);
        }
    };
    for (size_t i = 0; i < ctx_idx.size(); ++i) {
        blit(context[static_cast<size_t>(ctx_idx[i])], 0, static_cast<int>(i));
    }
    for (size_t i = 0; i < ground_truth.size(); ++i) {
        blit(ground_truth[i], 1, static_cast<int>(i));
    }
    for (size_t i = 0; i < predictions.size(); ++i) {
        blit(predictions[i], 2, static_cast<int>(i));
    }
    return grid;
}

void write_grid(const std::filesystem::path& path, std::span<const Tensor> context,
                std::span<const Tensor> predictions, std::span<const Tensor> ground_truth,
                int gutter) {
    formats::write_pgm(path, render_grid(context, predictions, ground_truth, gutter));
}

}  // namespace framecast::eval
