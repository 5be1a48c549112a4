#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "framecast/rng.hpp"
#include "framecast/types.hpp"

namespace framecast::synth {

struct ClipConfig {
    int height = 64;
    int width = 64;
    int frames = 20;
    int n_sprites = 2;
    int sprite_size = 16;
    double speed_min = 1.0;
    double speed_max = 3.0;
    // Integer velocities keep flow warping exact; sub-pixel mode renders with
    // bilinear sampling instead.
    bool integer_velocities = true;
    // Textured glyphs carry a per-cell hash pattern; solid ones a single
    // per-sprite brightness.
    bool textured = true;
};

// Throws std::invalid_argument on out-of-range configs (sprite size >= min(H,W),
// frames < 3, no sprites, degenerate speed range, frame smaller than 16).
void validate(const ClipConfig& cfg);

struct GeneratedClip {
    VideoClip clip;
    std::vector<FlowField> flows;                    // frames-1 analytic fields
    std::vector<std::vector<SpriteState>> states;    // per-frame sprite states
};

// Deterministic in (cfg, seed): constant-velocity sprites reflecting off the
// frame border, composited by per-pixel max, frames quantized to 8 bits.
GeneratedClip generate_clip(const ClipConfig& cfg, uint64_t seed, int clip_id = 0);

// One dynamics step with border reflection; flips the velocity sign on bounce.
SpriteState step_sprite(const SpriteState& s, int height, int width);

Tensor render_frame(std::span<const SpriteState> sprites, const ClipConfig& cfg);

// Exact displacement field: pixels covered by a sprite's bounding box at time t
// carry that sprite's position delta (later-listed sprite wins on overlap),
// zero elsewhere. Throws on mismatched sprite lists.
FlowField analytic_flow(std::span<const SpriteState> at_t, std::span<const SpriteState> at_t1,
                        const ClipConfig& cfg);

// Inclusive pixel range covered by a sprite edge starting at coordinate p.
std::pair<int, int> coverage(double p, int size, int limit);

Dataset generate_dataset(const ClipConfig& cfg, int clip_count, uint64_t seed);

// Layout: manifest.json + clips/<id>/frame_<k>.pgm + clips/<id>/flow_<k>.flo,
// ids zero-padded to 5 digits, k to 3. The manifest is written last and records
// an fnv1a checksum over all clip files in canonical order.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace framecast::synth
