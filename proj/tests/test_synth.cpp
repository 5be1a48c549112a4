#include <doctest.h>

#include <filesystem>

#include "framecast/formats.hpp"
#include "framecast/synth.hpp"
#include "test_util.hpp"

using namespace framecast;
namespace fs = std::filesystem;

namespace {

synth::ClipConfig small_config() {
    synth::ClipConfig cfg;
    cfg.height = 24;
    cfg.width = 24;
    cfg.frames = 6;
    cfg.n_sprites = 1;
    cfg.sprite_size = 8;
    cfg.speed_max = 3.0;
    return cfg;
}

fs::path temp_dir(const char* tag) {
    auto dir = fs::temp_directory_path() / (std::string("framecast_synth_") + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("config validation rejects degenerate setups") {
    auto cfg = small_config();
    cfg.sprite_size = 24;
    CHECK_THROWS_AS(synth::validate(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.frames = 2;
    CHECK_THROWS_AS(synth::validate(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.n_sprites = 0;
    CHECK_THROWS_AS(synth::validate(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.height = 8;
    CHECK_THROWS_AS(synth::validate(cfg), std::invalid_argument);
}

TEST_CASE("constant velocity translates the sprite pattern exactly") {
    auto cfg = small_config();
    SpriteState s{5.0, 4.0, 2.0, 1.0, 3, 8};
    std::vector<SpriteState> cur = {s};
    Tensor prev = synth::render_frame(cur, cfg);
    for (int step = 0; step < 3; ++step) {
        std::vector<SpriteState> next = {synth::step_sprite(cur[0], cfg.height, cfg.width)};
        Tensor frame = synth::render_frame(next, cfg);
        // every sprite-box pixel moved by (2,1)
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                const int sy = static_cast<int>(cur[0].py) + y;
                const int sx = static_cast<int>(cur[0].px) + x;
                CHECK(frame.at(sy + 1, sx + 2) == prev.at(sy, sx));
            }
        }
        cur = next;
        prev = frame;
    }
}

TEST_CASE("reflection flips velocity and keeps the position inside bounds") {
    auto cfg = small_config();
    SpriteState s{static_cast<double>(cfg.width - 8), 10.0, 3.0, 0.0, 0, 8};
    const SpriteState n = synth::step_sprite(s, cfg.height, cfg.width);
    CHECK(n.vx == -3.0);
    CHECK(n.px == doctest::Approx(cfg.width - 8 - 3));
    CHECK(n.py == 10.0);

    SpriteState left{0.0, 5.0, -2.0, 0.0, 0, 8};
    const SpriteState nl = synth::step_sprite(left, cfg.height, cfg.width);
    CHECK(nl.vx == 2.0);
    CHECK(nl.px == doctest::Approx(2.0));
}

TEST_CASE("bounce conserves speed components") {
    auto cfg = small_config();
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto gen = synth::generate_clip(cfg, rng.next_u64());
        for (const auto& states : gen.states) {
            CHECK(std::abs(states[0].vx) == std::abs(gen.states[0][0].vx));
            CHECK(std::abs(states[0].vy) == std::abs(gen.states[0][0].vy));
            CHECK(states[0].px >= 0.0);
            CHECK(states[0].px <= cfg.width - cfg.sprite_size);
            CHECK(states[0].py >= 0.0);
            CHECK(states[0].py <= cfg.height - cfg.sprite_size);
        }
    }
}

TEST_CASE("analytic flow: displacement on the sprite box, zero elsewhere") {
    auto cfg = small_config();
    std::vector<SpriteState> a = {{4.0, 6.0, 2.0, 1.0, 1, 8}};
    std::vector<SpriteState> b = {synth::step_sprite(a[0], cfg.height, cfg.width)};
    const FlowField flow = synth::analytic_flow(a, b, cfg);
    for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
            const bool inside = y >= 6 && y < 14 && x >= 4 && x < 12;
            CHECK(flow.u.at(y, x) == (inside ? 2.0 : 0.0));
            CHECK(flow.v.at(y, x) == (inside ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("analytic flow: stationary sprite gives a zero field") {
    auto cfg = small_config();
    std::vector<SpriteState> a = {{4.0, 6.0, 0.0, 0.0, 1, 8}};
    const FlowField flow = synth::analytic_flow(a, a, cfg);
    for (size_t i = 0; i < flow.u.size(); ++i) {
        CHECK(flow.u[i] == 0.0);
        CHECK(flow.v[i] == 0.0);
    }
}

TEST_CASE("analytic flow: the later sprite wins on overlap") {
    auto cfg = small_config();
    cfg.n_sprites = 2;
    std::vector<SpriteState> a = {{4.0, 4.0, 1.0, 0.0, 0, 8}, {8.0, 8.0, 0.0, 2.0, 1, 8}};
    std::vector<SpriteState> b = {synth::step_sprite(a[0], cfg.height, cfg.width),
                                  synth::step_sprite(a[1], cfg.height, cfg.width)};
    const FlowField flow = synth::analytic_flow(a, b, cfg);

    // brute-force rasterization oracle: paint sprite 0 then sprite 1
    Tensor eu({cfg.height, cfg.width}), ev({cfg.height, cfg.width});
    for (size_t s = 0; s < a.size(); ++s) {
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                const int py = static_cast<int>(a[s].py) + y;
                const int px = static_cast<int>(a[s].px) + x;
                eu.at(py, px) = b[s].px - a[s].px;
                ev.at(py, px) = b[s].py - a[s].py;
            }
        }
    }
    CHECK(bitwise_equal(flow.u, eu));
    CHECK(bitwise_equal(flow.v, ev));
    // overlap region carries sprite 1's motion (0,2)
    CHECK(flow.u.at(10, 10) == 0.0);
    CHECK(flow.v.at(10, 10) == 2.0);

    std::vector<SpriteState> wrong = {a[0]};
    CHECK_THROWS_AS((void)synth::analytic_flow(a, wrong, cfg), std::invalid_argument);
}

TEST_CASE("warping by the analytic flow reproduces the next frame exactly") {
    auto cfg = small_config();
    cfg.frames = 8;
    Rng seeds(99);
    for (int trial = 0; trial < 5; ++trial) {
        const auto gen = synth::generate_clip(cfg, seeds.next_u64());
        for (int t = 0; t + 1 < cfg.frames; ++t) {
            const auto& flow = gen.flows[static_cast<size_t>(t)];
            const auto& cur = gen.clip.frames[static_cast<size_t>(t)];
            const auto& next = gen.clip.frames[static_cast<size_t>(t) + 1];
            const auto& st = gen.states[static_cast<size_t>(t)][0];
            const auto [x0, x1] = synth::coverage(st.px, st.size, cfg.width);
            const auto [y0, y1] = synth::coverage(st.py, st.size, cfg.height);
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const int tx = x + static_cast<int>(flow.u.at(y, x));
                    const int ty = y + static_cast<int>(flow.v.at(y, x));
                    REQUIRE(tx >= 0);
                    REQUIRE(ty >= 0);
                    CHECK(next.at(ty, tx) == cur.at(y, x));
                }
            }
        }
    }
}

TEST_CASE("generation is deterministic and 8-bit quantized") {
    auto cfg = small_config();
    cfg.n_sprites = 2;
    const auto a = synth::generate_clip(cfg, 42);
    const auto b = synth::generate_clip(cfg, 42);
    REQUIRE(a.clip.frames.size() == b.clip.frames.size());
    for (size_t i = 0; i < a.clip.frames.size(); ++i) {
        CHECK(bitwise_equal(a.clip.frames[i], b.clip.frames[i]));
    }
    const auto c = synth::generate_clip(cfg, 43);
    bool any_diff = false;
    for (size_t i = 0; i < a.clip.frames.size() && !any_diff; ++i) {
        any_diff = !bitwise_equal(a.clip.frames[i], c.clip.frames[i]);
    }
    CHECK(any_diff);
    for (double v : {a.clip.frames[0].min(), a.clip.frames[0].max()}) {
        CHECK(v * 255.0 == doctest::Approx(std::round(v * 255.0)).epsilon(1e-12));
    }
}

TEST_CASE("dataset write/read round trip is exact") {
    auto cfg = small_config();
    cfg.n_sprites = 2;
    const auto ds = synth::generate_dataset(cfg, 3, 7);
    const auto dir = temp_dir("roundtrip");
    synth::write_dataset(ds, dir);
    const auto back = synth::read_dataset(dir);
    CHECK(back.manifest.clip_count == 3);
    CHECK(back.manifest.speed_max == cfg.speed_max);
    CHECK(!back.manifest.checksum.empty());
    REQUIRE(back.clips.size() == ds.clips.size());
    for (size_t c = 0; c < ds.clips.size(); ++c) {
        for (size_t f = 0; f < ds.clips[c].frames.size(); ++f) {
            CHECK(bitwise_equal(back.clips[c].frames[f], ds.clips[c].frames[f]));
        }
        for (size_t f = 0; f < ds.flows[c].size(); ++f) {
            CHECK(bitwise_equal(back.flows[c][f].u, ds.flows[c][f].u));
            CHECK(bitwise_equal(back.flows[c][f].v, ds.flows[c][f].v));
        }
    }

    SUBCASE("same config and seed give identical datasets") {
        const auto ds2 = synth::generate_dataset(cfg, 3, 7);
        const auto dir2 = temp_dir("roundtrip2");
        synth::write_dataset(ds2, dir2);
        CHECK(synth::read_dataset(dir2).manifest.checksum == back.manifest.checksum);
    }
    SUBCASE("missing clip directory is diagnosed") {
        fs::remove_all(dir / "clips" / "00002");
        CHECK_THROWS_AS((void)synth::read_dataset(dir), formats::FormatError);
    }
    SUBCASE("stray entries in the clips directory are diagnosed") {
        fs::create_directories(dir / "clips" / "scratch");
        CHECK_THROWS_AS((void)synth::read_dataset(dir), formats::FormatError);
    }
    SUBCASE("corrupted flow magic names the file") {
        auto bytes = formats::read_file(dir / "clips" / "00001" / "flow_000.flo");
        bytes[1] ^= 0x40;
        formats::write_file(dir / "clips" / "00001" / "flow_000.flo", bytes);
        try {
            (void)synth::read_dataset(dir);
            FAIL("expected a format error");
        } catch (const formats::FormatError& e) {
            CHECK(std::string(e.what()).find("flow_000.flo") != std::string::npos);
        }
    }
    SUBCASE("pixel corruption fails the checksum") {
        auto bytes = formats::read_file(dir / "clips" / "00000" / "frame_002.pgm");
        bytes[bytes.size() - 1] ^= 0x01;
        formats::write_file(dir / "clips" / "00000" / "frame_002.pgm", bytes);
        try {
            (void)synth::read_dataset(dir);
            FAIL("expected a checksum error");
        } catch (const formats::FormatError& e) {
            CHECK(std::string(e.what()).find("checksum") != std::string::npos);
        }
    }
    SUBCASE("version mismatch is rejected") {
        auto bytes = formats::read_file(dir / "manifest.json");
        std::string text(bytes.begin(), bytes.end());
        const auto pos = text.find("\"format_version\": \"1\"");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 22, "\"format_version\": \"9\"");
        formats::write_file(dir / "manifest.json",
                            std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
        CHECK_THROWS_AS((void)synth::read_dataset(dir), formats::FormatError);
    }
}

TEST_CASE("sub-pixel mode stays in bounds and renders finite frames") {
    auto cfg = small_config();
    cfg.integer_velocities = false;
    cfg.speed_min = 0.5;
    const auto gen = synth::generate_clip(cfg, 5);
    for (const auto& f : gen.clip.frames) {
        CHECK(f.all_finite());
        CHECK(f.min() >= 0.0);
        CHECK(f.max() <= 1.0);
    }
    for (const auto& flow : gen.flows) {
        CHECK(flow.u.all_finite());
        // float32-representable so .flo round trips exactly
        for (size_t i = 0; i < flow.u.size(); ++i) {
            CHECK(static_cast<double>(static_cast<float>(flow.u[i])) == flow.u[i]);
        }
    }
}
