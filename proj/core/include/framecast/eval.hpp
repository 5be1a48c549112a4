#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "framecast/flow.hpp"
#include "framecast/metrics.hpp"
#include "framecast/nets.hpp"
#include "framecast/types.hpp"

namespace framecast::eval {

struct MetricRow {
    int clip_id = 0;
    int horizon = 0;  // 1-based
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct HorizonStats {
    int horizon = 0;
    int count = 0;
    double psnr_mean = 0.0, psnr_std = 0.0, psnr_median = 0.0;
    double ssim_mean = 0.0, ssim_std = 0.0, ssim_median = 0.0;
};

struct MetricSeries {
    std::vector<MetricRow> rows;  // sorted by (clip_id, horizon)

    std::vector<HorizonStats> aggregate() const;
    void sort();
};

// Rollout on every clip, then per-horizon PSNR/SSIM against ground truth.
// Clips shorter than context+horizon are rejected.
MetricSeries evaluate(model::ModelBundle& bundle, const Dataset& ds,
                      const flow::FlowProvider& provider, double flow_bound, int context_len,
                      int horizon);

// Same metrics for externally produced predictions, keyed by clip id.
MetricSeries evaluate_predictions(const std::map<int, std::vector<Tensor>>& predictions,
                                  const Dataset& ds, int context_len, int horizon);

// Schema: clip_id,horizon,psnr_db,ssim
void write_metrics_csv(const MetricSeries& series, const std::filesystem::path& path);
void write_summary_json(const MetricSeries& series, const std::filesystem::path& path);

// Tiled comparison image: row 1 context (subsampled to at most 3 frames),
// row 2 ground-truth futures, row 3 predictions. Cell pitch is (W+gutter) by
// (H+gutter); the grid is exactly max(row lengths)*(W+gutter) wide.
Tensor render_grid(std::span<const Tensor> context, std::span<const Tensor> predictions,
                   std::span<const Tensor> ground_truth, int gutter = 2);
void write_grid(const std::filesystem::path& path, std::span<const Tensor> context,
                std::span<const Tensor> predictions, std::span<const Tensor> ground_truth,
                int gutter = 2);

}  // namespace framecast::eval
