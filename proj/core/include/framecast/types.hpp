#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "framecast/tensor.hpp"

namespace framecast {

// One moving sprite: sub-pixel position of the top-left corner of its
// size x size bounding box, velocity in pixels/frame, atlas glyph index.
struct SpriteState {
    double px = 0.0, py = 0.0;
    double vx = 0.0, vy = 0.0;
    int sprite_id = 0;
    int size = 0;
};

// Fixed-length grayscale clip; frames are (H, W) tensors with values in [0,1],
// quantized to multiples of 1/255 by the generator.
struct VideoClip {
    int clip_id = 0;
    std::vector<Tensor> frames;

    int length() const { return static_cast<int>(frames.size()); }
    int height() const { return frames.empty() ? 0 : frames[0].dim(0); }
    int width() const { return frames.empty() ? 0 : frames[0].dim(1); }
};

// Per-pixel displacement between adjacent frames.
struct FlowField {
    Tensor u;  // (H, W) horizontal displacement, pixels
    Tensor v;  // (H, W) vertical displacement, pixels

    FlowField() = default;
    FlowField(int h, int w) : u(Tensor::zeros({h, w})), v(Tensor::zeros({h, w})) {}

    int height() const { return u.empty() ? 0 : u.dim(0); }
    int width() const { return u.empty() ? 0 : u.dim(1); }
};

struct DatasetManifest {
    std::string format_version = "1";
    int clip_count = 0;
    int frames_per_clip = 0;
    int height = 0;
    int width = 0;
    int sprites_per_clip = 0;
    double speed_max = 0.0;  // needed downstream to pick the flow normalization bound
    uint64_t seed = 0;
    std::string checksum;  // fnv1a over all clip files in canonical order

    bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<VideoClip> clips;
    std::vector<std::vector<FlowField>> flows;  // flows[c][k]: frame k -> k+1
};

// Round-half-away-from-zero quantization of [0,1] pixel values to 8 bits.
inline uint8_t quantize8(double v) {
    double s = v * 255.0;
    if (s <= 0.0) return 0;
    if (s >= 255.0) return 255;
    return static_cast<uint8_t>(std::lround(s));
}

inline double dequantize8(uint8_t q) { return static_cast<double>(q) / 255.0; }

}  // namespace framecast
