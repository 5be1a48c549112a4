#include "framecast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "framecast/formats.hpp"
#include "framecast/hash.hpp"

namespace framecast::synth {

namespace {

using nlohmann::json;

// 8x8 glyph atlas: digit-like shapes rendered from bit rows.
constexpr uint8_t kGlyphs[10][8] = {
    {0x3c, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x3c},  // 0
    {0x18, 0x38, 0x18, 0x18, 0x18, 0x18, 0x18, 0x7e},  // 1
    {0x3c, 0x66, 0x06, 0x0c, 0x18, 0x30, 0x60, 0x7e},  // 2
    {0x3c, 0x66, 0x06, 0x1c, 0x06, 0x06, 0x66, 0x3c},  // 3
    {0x0c, 0x1c, 0x3c, 0x6c, 0x7e, 0x0c, 0x0c, 0x0c},  // 4
    {0x7e, 0x60, 0x7c, 0x06, 0x06, 0x06, 0x66, 0x3c},  // 5
    {0x1c, 0x30, 0x60, 0x7c, 0x66, 0x66, 0x66, 0x3c},  // 6
    {0x7e, 0x06, 0x0c, 0x18, 0x30, 0x30, 0x30, 0x30},  // 7
    {0x3c, 0x66, 0x66, 0x3c, 0x66, 0x66, 0x66, 0x3c},  // 8
    {0x3c, 0x66, 0x66, 0x66, 0x3e, 0x06, 0x0c, 0x38},  // 9
};

double hash01(uint64_t a, uint64_t b, uint64_t c) {
    uint64_t x = Rng::mix(Rng::mix(a, b), c);
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// Scaled sprite pattern, values pre-quantized to the 8-bit grid.
Tensor sprite_pattern(int sprite_id, int size, bool textured) {
    Tensor p({size, size});
    const double solid = 0.55 + 0.45 * hash01(static_cast<uint64_t>(sprite_id), 7, 7);
    for (int y = 0; y < size; ++y) {
        const int gy = y * 8 / size;
        for (int x = 0; x < size; ++x) {
            const int gx = x * 8 / size;
            const bool on = (kGlyphs[sprite_id % 10][gy] >> (7 - gx)) & 1;
            if (on) {
                const double v =
                    textured ? 0.35 + 0.65 * hash01(static_cast<uint64_t>(sprite_id), gx, gy)
                             : solid;
                p.at(y, x) = dequantize8(quantize8(v));
            }
        }
    }
    return p;
}

bool is_integral(double v) { return v == std::floor(v); }

double bilinear(const Tensor& p, double y, double x) {
    const int size = p.dim(0);
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto sample = [&](int yy, int xx) -> double {
        if (yy < 0 || xx < 0 || yy >= size || xx >= size) return 0.0;
        return p.at(yy, xx);
    };
    return (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
           fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
}

}  // namespace

void validate(const ClipConfig& cfg) {
    if (cfg.height < 16 || cfg.width < 16) {
        throw std::invalid_argument("clip config: frame must be at least 16x16");
    }
    if (cfg.frames < 3) throw std::invalid_argument("clip config: need at least 3 frames");
    if (cfg.n_sprites < 1) throw std::invalid_argument("clip config: need at least one sprite");
    if (cfg.sprite_size < 2) throw std::invalid_argument("clip config: sprite size too small");
    if (cfg.sprite_size >= std::min(cfg.height, cfg.width)) {
        throw std::invalid_argument("clip config: sprite size must be smaller than the frame");
    }
    if (cfg.speed_min < (cfg.integer_velocities ? 1.0 : 1e-6) || cfg.speed_max < cfg.speed_min) {
        throw std::invalid_argument("clip config: bad speed range");
    }
    if (cfg.speed_max >= std::min(cfg.height, cfg.width) - cfg.sprite_size) {
        throw std::invalid_argument("clip config: speed too large for frame");
    }
}

SpriteState step_sprite(const SpriteState& s, int height, int width) {
    SpriteState n = s;
    n.px += n.vx;
    n.py += n.vy;
    const double bx = static_cast<double>(width - s.size);
    const double by = static_cast<double>(height - s.size);
    while (n.px < 0.0 || n.px > bx) {
        if (n.px < 0.0) n.px = -n.px;
        else n.px = 2.0 * bx - n.px;
        n.vx = -n.vx;
    }
    while (n.py < 0.0 || n.py > by) {
        if (n.py < 0.0) n.py = -n.py;
        else n.py = 2.0 * by - n.py;
        n.vy = -n.vy;
    }
    return n;
}

std::pair<int, int> coverage(double p, int size, int limit) {
    const int lo = static_cast<int>(std::floor(p));
    const int hi = is_integral(p) ? lo + size - 1 : lo + size;
    return {std::max(lo, 0), std::min(hi, limit - 1)};
}

Tensor render_frame(std::span<const SpriteState> sprites, const ClipConfig& cfg) {
    Tensor img({cfg.height, cfg.width});
    for (const auto& s : sprites) {
        const Tensor pat = sprite_pattern(s.sprite_id, s.size, cfg.textured);
        const auto [x0, x1] = coverage(s.px, s.size, cfg.width);
        const auto [y0, y1] = coverage(s.py, s.size, cfg.height);
        const bool integral = is_integral(s.px) && is_integral(s.py);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double v = integral
                                     ? pat.at(y - static_cast<int>(s.py),
                                              x - static_cast<int>(s.px))
                                     : bilinear(pat, y - s.py, x - s.px);
                img.at(y, x) = std::max(img.at(y, x), v);
            }
        }
    }
    for (size_t i = 0; i < img.size(); ++i) img[i] = dequantize8(quantize8(img[i]));
    return img;
}

FlowField analytic_flow(std::span<const SpriteState> at_t, std::span<const SpriteState> at_t1,
                        const ClipConfig& cfg) {
    if (at_t.size() != at_t1.size()) {
        throw std::invalid_argument("analytic_flow: mismatched sprite lists");
    }
    FlowField flow(cfg.height, cfg.width);
    for (size_t s = 0; s < at_t.size(); ++s) {
        if (at_t[s].sprite_id != at_t1[s].sprite_id || at_t[s].size != at_t1[s].size) {
            throw std::invalid_argument("analytic_flow: mismatched sprite lists");
        }
        // Pass the displacement through float so .flo round-trips reproduce it
        // exactly.
        const double du = static_cast<double>(static_cast<float>(at_t1[s].px - at_t[s].px));
        const double dv = static_cast<double>(static_cast<float>(at_t1[s].py - at_t[s].py));
        const auto [x0, x1] = coverage(at_t[s].px, at_t[s].size, cfg.width);
        const auto [y0, y1] = coverage(at_t[s].py, at_t[s].size, cfg.height);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                flow.u.at(y, x) = du;
                flow.v.at(y, x) = dv;
            }
        }
    }
    return flow;
}

GeneratedClip generate_clip(const ClipConfig& cfg, uint64_t seed, int clip_id) {
    validate(cfg);
    Rng rng(seed);
    std::vector<SpriteState> sprites;
    sprites.reserve(static_cast<size_t>(cfg.n_sprites));
    for (int i = 0; i < cfg.n_sprites; ++i) {
        SpriteState s;
        s.sprite_id = static_cast<int>(rng.uniform_int(0, 9));
        s.size = cfg.sprite_size;
        if (cfg.integer_velocities) {
            s.px = static_cast<double>(rng.uniform_int(0, cfg.width - cfg.sprite_size));
            s.py = static_cast<double>(rng.uniform_int(0, cfg.height - cfg.sprite_size));
            const auto lo = static_cast<int64_t>(std::ceil(cfg.speed_min));
            const auto hi = static_cast<int64_t>(std::floor(cfg.speed_max));
            s.vx = static_cast<double>(rng.uniform_int(lo, hi)) * (rng.coin() ? 1.0 : -1.0);
            s.vy = static_cast<double>(rng.uniform_int(lo, hi)) * (rng.coin() ? 1.0 : -1.0);
        } else {
            s.px = rng.uniform(0.0, static_cast<double>(cfg.width - cfg.sprite_size));
            s.py = rng.uniform(0.0, static_cast<double>(cfg.height - cfg.sprite_size));
            s.vx = rng.uniform(cfg.speed_min, cfg.speed_max) * (rng.coin() ? 1.0 : -1.0);
            s.vy = rng.uniform(cfg.speed_min, cfg.speed_max) * (rng.coin() ? 1.0 : -1.0);
        }
        sprites.push_back(s);
    }

    GeneratedClip out;
    out.clip.clip_id = clip_id;
    out.states.push_back(sprites);
    for (int t = 1; t < cfg.frames; ++t) {
        std::vector<SpriteState> next;
        next.reserve(sprites.size());
        for (const auto& s : out.states.back()) next.push_back(step_sprite(s, cfg.height, cfg.width));
        out.states.push_back(std::move(next));
    }
    for (int t = 0; t < cfg.frames; ++t) {
        out.clip.frames.push_back(render_frame(out.states[static_cast<size_t>(t)], cfg));
    }
    for (int t = 0; t + 1 < cfg.frames; ++t) {
        out.flows.push_back(analytic_flow(out.states[static_cast<size_t>(t)],
                                          out.states[static_cast<size_t>(t) + 1], cfg));
    }
    return out;
}

Dataset generate_dataset(const ClipConfig& cfg, int clip_count, uint64_t seed) {
    if (clip_count < 1) throw std::invalid_argument("dataset: need at least one clip");
    validate(cfg);
    Dataset ds;
    ds.manifest.clip_count = clip_count;
    ds.manifest.frames_per_clip = cfg.frames;
    ds.manifest.height = cfg.height;
    ds.manifest.width = cfg.width;
    ds.manifest.sprites_per_clip = cfg.n_sprites;
    ds.manifest.speed_max = cfg.speed_max;
    ds.manifest.seed = seed;
    for (int c = 0; c < clip_count; ++c) {
        auto gen = generate_clip(cfg, Rng::mix(seed, static_cast<uint64_t>(c)), c);
        ds.clips.push_back(std::move(gen.clip));
        ds.flows.push_back(std::move(gen.flows));
    }
    return ds;
}

namespace {

std::string clip_dir_name(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05d", id);
    return buf;
}

std::string frame_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d.pgm", k);
    return buf;
}

std::string flow_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "flow_%03d.flo", k);
    return buf;
}

json manifest_to_json(const DatasetManifest& m) {
    return json{{"format_version", m.format_version},
                {"clip_count", m.clip_count},
                {"frames_per_clip", m.frames_per_clip},
                {"height", m.height},
                {"width", m.width},
                {"sprites_per_clip", m.sprites_per_clip},
                {"speed_max", m.speed_max},
                {"seed", m.seed},
                {"checksum", m.checksum}};
}

DatasetManifest manifest_from_json(const json& j, const std::string& origin) {
    DatasetManifest m;
    try {
        m.format_version = j.at("format_version").get<std::string>();
        m.clip_count = j.at("clip_count").get<int>();
        m.frames_per_clip = j.at("frames_per_clip").get<int>();
        m.height = j.at("height").get<int>();
        m.width = j.at("width").get<int>();
        m.sprites_per_clip = j.at("sprites_per_clip").get<int>();
        m.speed_max = j.at("speed_max").get<double>();
        m.seed = j.at("seed").get<uint64_t>();
        m.checksum = j.at("checksum").get<std::string>();
    } catch (const json::exception& ex) {
        throw formats::FormatError(origin + ": malformed manifest: " + ex.what());
    }
    if (m.format_version != "1") {
        throw formats::FormatError(origin + ": unsupported format_version '" + m.format_version +
                                   "'");
    }
    return m;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    if (ds.clips.size() != static_cast<size_t>(ds.manifest.clip_count) ||
        ds.flows.size() != ds.clips.size()) {
        throw std::invalid_argument("write_dataset: manifest clip count mismatch");
    }
    std::filesystem::create_directories(dir / "clips");
    Fnv1a checksum;
    for (size_t c = 0; c < ds.clips.size(); ++c) {
        const auto cdir = dir / "clips" / clip_dir_name(ds.clips[c].clip_id);
        std::filesystem::create_directories(cdir);
        for (int k = 0; k < ds.clips[c].length(); ++k) {
            const auto bytes = formats::encode_pgm(ds.clips[c].frames[static_cast<size_t>(k)]);
            checksum.update(bytes.data(), bytes.size());
            formats::write_file(cdir / frame_name(k), bytes);
        }
        for (size_t k = 0; k < ds.flows[c].size(); ++k) {
            const auto bytes = formats::encode_flo(ds.flows[c][k]);
            checksum.update(bytes.data(), bytes.size());
            formats::write_file(cdir / flow_name(static_cast<int>(k)), bytes);
        }
    }
    DatasetManifest m = ds.manifest;
    m.checksum = checksum.hex();
    const std::string text = manifest_to_json(m).dump(2) + "\n";
    formats::write_file(dir / "manifest.json",
                        std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

Dataset read_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    const auto bytes = formats::read_file(manifest_path);
    json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (j.is_discarded()) throw formats::FormatError(manifest_path.string() + ": invalid JSON");
    Dataset ds;
    ds.manifest = manifest_from_json(j, manifest_path.string());

    const auto clips_dir = dir / "clips";
    std::map<int, std::filesystem::path> clip_dirs;
    if (std::filesystem::exists(clips_dir)) {
        for (const auto& e : std::filesystem::directory_iterator(clips_dir)) {
            if (!e.is_directory()) continue;
            const std::string name = e.path().filename().string();
            if (name.empty() || name.find_first_not_of("0123456789") != std::string::npos) {
                throw formats::FormatError(e.path().string() +
                                           ": unexpected entry in the clips directory");
            }
            clip_dirs[std::stoi(name)] = e.path();
        }
    }
    if (clip_dirs.size() != static_cast<size_t>(ds.manifest.clip_count)) {
        throw formats::FormatError(manifest_path.string() + ": manifest declares " +
                                   std::to_string(ds.manifest.clip_count) + " clips but " +
                                   std::to_string(clip_dirs.size()) + " are on disk");
    }

    Fnv1a checksum;
    const int T = ds.manifest.frames_per_clip;
    for (const auto& [id, cdir] : clip_dirs) {
        VideoClip clip;
        clip.clip_id = id;
        for (int k = 0; k < T; ++k) {
            const auto path = cdir / frame_name(k);
            const auto fb = formats::read_file(path);
            checksum.update(fb.data(), fb.size());
            Tensor img = formats::decode_pgm(fb, path.string());
            if (img.dim(0) != ds.manifest.height || img.dim(1) != ds.manifest.width) {
                throw formats::FormatError(path.string() + ": frame shape disagrees with manifest");
            }
            clip.frames.push_back(std::move(img));
        }
        std::vector<FlowField> flows;
        for (int k = 0; k + 1 < T; ++k) {
            const auto path = cdir / flow_name(k);
            const auto fb = formats::read_file(path);
            checksum.update(fb.data(), fb.size());
            FlowField flow = formats::decode_flo(fb, path.string());
            if (flow.height() != ds.manifest.height || flow.width() != ds.manifest.width) {
                throw formats::FormatError(path.string() + ": flow shape disagrees with manifest");
            }
            flows.push_back(std::move(flow));
        }
        ds.clips.push_back(std::move(clip));
        ds.flows.push_back(std::move(flows));
    }
    if (checksum.hex() != ds.manifest.checksum) {
        throw formats::FormatError(manifest_path.string() + ": checksum mismatch");
    }
    return ds;
}

}  // namespace framecast::synth
