#include <doctest.h>

#include <filesystem>

#include "framecast/formats.hpp"
#include "framecast/hash.hpp"
#include "test_util.hpp"

using namespace framecast;
namespace fs = std::filesystem;

namespace {

fs::path golden(const char* name) { return fs::path(FRAMECAST_GOLDEN_DIR) / name; }

fs::path temp_dir(const char* tag) {
    auto dir = fs::temp_directory_path() / (std::string("framecast_fmt_") + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("pgm: canonical round trip and golden bytes") {
    Tensor img({2, 2}, {0.0, 128.0 / 255.0, 1.0, 7.0 / 255.0});
    const auto bytes = formats::encode_pgm(img);
    const auto gold = formats::read_file(golden("tiny.pgm"));
    CHECK(bytes == gold);
    const Tensor back = formats::decode_pgm(bytes);
    CHECK(bitwise_equal(back, img));
    CHECK(formats::encode_pgm(back) == bytes);
}

TEST_CASE("pgm: malformed inputs are rejected with named reasons") {
    auto ok = formats::encode_pgm(Tensor({2, 3}, {0, 0.1, 0.2, 0.3, 0.4, 0.5}));
    auto mutate = [&](size_t at, uint8_t v) {
        auto b = ok;
        b[at] = v;
        return b;
    };
    CHECK_THROWS_AS((void)formats::decode_pgm(mutate(0, 'Q')), formats::FormatError);
    CHECK_THROWS_AS((void)formats::decode_pgm(mutate(1, '6')), formats::FormatError);
    // non-canonical maxval
    std::vector<uint8_t> weird(ok.begin(), ok.end());
    weird[7] = '9';  // "255" -> "259"
    CHECK_THROWS_AS((void)formats::decode_pgm(weird), formats::FormatError);
    // trailing junk
    auto extra = ok;
    extra.push_back(0);
    CHECK_THROWS_WITH_AS((void)formats::decode_pgm(extra, "x.pgm"),
                         "x.pgm: trailing bytes after pixel payload", formats::FormatError);
}

TEST_CASE("pgm/flo: every truncation fails cleanly") {
    const auto pgm = formats::read_file(golden("tiny.pgm"));
    for (size_t len = 0; len < pgm.size(); ++len) {
        std::span<const uint8_t> prefix(pgm.data(), len);
        CHECK_THROWS_AS((void)formats::decode_pgm(prefix), formats::FormatError);
    }
    const auto flo = formats::read_file(golden("tiny.flo"));
    for (size_t len = 0; len < flo.size(); ++len) {
        std::span<const uint8_t> prefix(flo.data(), len);
        CHECK_THROWS_AS((void)formats::decode_flo(prefix), formats::FormatError);
    }
}

TEST_CASE("flo: golden decode, round trip, magic guard") {
    const auto gold = formats::read_file(golden("tiny.flo"));
    FlowField flow = formats::decode_flo(gold, "tiny.flo");
    REQUIRE(flow.height() == 2);
    REQUIRE(flow.width() == 2);
    CHECK(flow.u.at(0, 0) == doctest::Approx(0.5));
    CHECK(flow.u.at(0, 1) == doctest::Approx(1.0));
    CHECK(flow.v.at(1, 0) == doctest::Approx(-2.0));
    CHECK(formats::encode_flo(flow) == gold);

    auto bad = gold;
    bad[0] ^= 0xff;
    CHECK_THROWS_WITH_AS((void)formats::decode_flo(bad, "evil.flo"),
                         "evil.flo: bad magic number (want 202021.25)", formats::FormatError);
}

TEST_CASE("checkpoint: round trip, offset and size validation") {
    const auto dir = temp_dir("ckpt");
    formats::CheckpointHeader h;
    h.config_digest = "deadbeef";
    h.seed = 42;
    h.config_json = "{\"k\":1}";
    h.entries = {{"a/w", "f32", {2, 2}, 0, 0}, {"b/w", "f32", {3}, 0, 0}};
    std::vector<Tensor> tensors = {Tensor({2, 2}, {1.5, -2.0, 0.25, 8.0}),
                                   Tensor({3}, {0.0, -1.0, 3.5})};
    formats::write_checkpoint(dir, h, tensors);

    auto [back, values] = formats::read_checkpoint(dir);
    CHECK(back.config_digest == "deadbeef");
    CHECK(back.seed == 42);
    REQUIRE(values.size() == 2);
    CHECK(bitwise_equal(values[0], tensors[0]));
    CHECK(bitwise_equal(values[1], tensors[1]));
    CHECK(back.entries[1].offset == 16);

    SUBCASE("header that lies about the blob size is rejected before load") {
        // Shrink the blob by one float; header now overdeclares.
        auto blob = formats::read_file(dir / "params.bin");
        blob.resize(blob.size() - 4);
        formats::write_file(dir / "params.bin", blob);
        CHECK_THROWS_AS((void)formats::read_checkpoint(dir), formats::FormatError);
    }
    SUBCASE("truncated blob at every float boundary is rejected") {
        const auto blob = formats::read_file(dir / "params.bin");
        for (size_t len = 0; len < blob.size(); len += 4) {
            std::vector<uint8_t> cut(blob.begin(), blob.begin() + static_cast<long>(len));
            formats::write_file(dir / "params.bin", cut);
            CHECK_THROWS_AS((void)formats::read_checkpoint(dir), formats::FormatError);
        }
    }
    SUBCASE("non-contiguous offsets are rejected") {
        auto bytes = formats::read_file(dir / "header.json");
        std::string text(bytes.begin(), bytes.end());
        const auto pos = text.find("\"offset\": 16");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 12, "\"offset\": 20");
        formats::write_file(dir / "header.json",
                            std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
        CHECK_THROWS_AS((void)formats::read_checkpoint(dir), formats::FormatError);
    }
}

TEST_CASE("csv writer formats deterministically") {
    const auto dir = temp_dir("csv");
    {
        formats::CsvWriter csv(dir / "t.csv", "a,b");
        csv.row({"1", formats::CsvWriter::fmt(0.123456789123)});
        csv.row({"2", formats::CsvWriter::fmt(20.0)});
        csv.close();
    }
    const auto bytes = formats::read_file(dir / "t.csv");
    const std::string text(bytes.begin(), bytes.end());
    CHECK(text == "a,b\n1,0.123456789\n2,20\n");
}

TEST_CASE("fnv1a digest is stable") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("framecast") != fnv1a_hex("framecasT"));
}
