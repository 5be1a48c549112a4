#include "framecast/formats.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>

#include <nlohmann/json.hpp>

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace framecast::formats {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
    throw FormatError(origin + ": " + msg);
}

template <typename T>
T read_le(std::span<const uint8_t> bytes, size_t offset, const std::string& origin,
          const char* field) {
    if (offset + sizeof(T) > bytes.size()) {
        fail(origin, std::string("truncated before ") + field);
    }
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    return v;
}

template <typename T>
void append_le(std::vector<uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

}  // namespace

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) fail(path.string(), "cannot open for reading");
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    const size_t got = size > 0 ? std::fread(bytes.data(), 1, bytes.size(), f) : 0;
    std::fclose(f);
    if (got != bytes.size()) fail(path.string(), "short read");
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) fail(path.string(), "cannot open for writing");
    const size_t put = bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), f);
    const int rc = std::fclose(f);
    if (put != bytes.size() || rc != 0) fail(path.string(), "short write");
}

// --- PGM --------------------------------------------------------------------

std::vector<uint8_t> encode_pgm(const Tensor& image01) {
    if (image01.rank() != 2) throw FormatError("pgm: image must be rank-2");
    const int h = image01.dim(0), w = image01.dim(1);
    char header[64];
    const int n = std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", w, h);
    std::vector<uint8_t> out(header, header + n);
    out.reserve(out.size() + static_cast<size_t>(h) * w);
    for (size_t i = 0; i < image01.size(); ++i) out.push_back(quantize8(image01[i]));
    return out;
}

namespace {

// Canonical-form integer token: nonempty digits, no sign, no leading zeros
// (except "0" itself).
int parse_uint_token(std::span<const uint8_t> bytes, size_t& pos, const std::string& origin,
                     const char* field) {
    size_t start = pos;
    long long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
        v = v * 10 + (bytes[pos] - '0');
        if (v > 1 << 20) fail(origin, std::string("unreasonable ") + field);
        ++pos;
    }
    if (pos == start) fail(origin, std::string("missing ") + field);
    if (bytes[start] == '0' && pos - start > 1) fail(origin, std::string("non-canonical ") + field);
    return static_cast<int>(v);
}

void expect_byte(std::span<const uint8_t> bytes, size_t& pos, uint8_t want,
                 const std::string& origin, const char* what) {
    if (pos >= bytes.size() || bytes[pos] != want) {
        fail(origin, std::string("expected ") + what);
    }
    ++pos;
}

}  // namespace

Tensor decode_pgm(std::span<const uint8_t> bytes, const std::string& origin) {
    size_t pos = 0;
    expect_byte(bytes, pos, 'P', origin, "magic 'P5'");
    expect_byte(bytes, pos, '5', origin, "magic 'P5'");
    expect_byte(bytes, pos, '\n', origin, "newline after magic");
    const int w = parse_uint_token(bytes, pos, origin, "width");
    expect_byte(bytes, pos, ' ', origin, "space between width and height");
    const int h = parse_uint_token(bytes, pos, origin, "height");
    expect_byte(bytes, pos, '\n', origin, "newline after dimensions");
    const int maxval = parse_uint_token(bytes, pos, origin, "maxval");
    if (maxval != 255) fail(origin, "maxval must be 255");
    expect_byte(bytes, pos, '\n', origin, "newline after maxval");
    if (w <= 0 || h <= 0) fail(origin, "dimensions must be positive");
    const size_t need = static_cast<size_t>(w) * h;
    if (bytes.size() - pos < need) fail(origin, "truncated pixel payload");
    if (bytes.size() - pos > need) fail(origin, "trailing bytes after pixel payload");
    Tensor img({h, w});
    for (size_t i = 0; i < need; ++i) img[i] = dequantize8(bytes[pos + i]);
    return img;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image01) {
    write_file(path, encode_pgm(image01));
}

Tensor read_pgm(const std::filesystem::path& path) {
    return decode_pgm(read_file(path), path.string());
}

// --- .flo -------------------------------------------------------------------

std::vector<uint8_t> encode_flo(const FlowField& flow) {
    const int h = flow.height(), w = flow.width();
    std::vector<uint8_t> out;
    out.reserve(12 + static_cast<size_t>(h) * w * 8);
    append_le(out, kFloMagic);
    append_le(out, static_cast<int32_t>(w));
    append_le(out, static_cast<int32_t>(h));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            append_le(out, static_cast<float>(flow.u.at(y, x)));
            append_le(out, static_cast<float>(flow.v.at(y, x)));
        }
    }
    return out;
}

FlowField decode_flo(std::span<const uint8_t> bytes, const std::string& origin) {
    const float magic = read_le<float>(bytes, 0, origin, "magic");
    if (magic != kFloMagic) fail(origin, "bad magic number (want 202021.25)");
    const int32_t w = read_le<int32_t>(bytes, 4, origin, "width");
    const int32_t h = read_le<int32_t>(bytes, 8, origin, "height");
    if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
        fail(origin, "dimensions out of range");
    }
    const size_t need = 12 + static_cast<size_t>(w) * h * 8;
    if (bytes.size() < need) fail(origin, "truncated flow payload");
    if (bytes.size() > need) fail(origin, "trailing bytes after flow payload");
    FlowField flow(h, w);
    size_t pos = 12;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            flow.u.at(y, x) = read_le<float>(bytes, pos, origin, "u");
            flow.v.at(y, x) = read_le<float>(bytes, pos + 4, origin, "v");
            pos += 8;
        }
    }
    return flow;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
    write_file(path, encode_flo(flow));
}

FlowField read_flo(const std::filesystem::path& path) {
    return decode_flo(read_file(path), path.string());
}

// --- checkpoint blob ---------------------------------------------------------

namespace {

json header_to_json(const CheckpointHeader& h) {
    json entries = json::array();
    for (const auto& e : h.entries) {
        entries.push_back({{"name", e.name},
                           {"dtype", e.dtype},
                           {"shape", e.shape},
                           {"offset", e.offset},
                           {"length", e.length}});
    }
    json config = h.config_json.empty() ? json::object() : json::parse(h.config_json);
    return json{{"format_version", h.format_version},
                {"config_digest", h.config_digest},
                {"seed", h.seed},
                {"config", config},
                {"entries", entries}};
}

CheckpointHeader header_from_json(const json& j, const std::string& origin) {
    CheckpointHeader h;
    try {
        h.format_version = j.at("format_version").get<int>();
        h.config_digest = j.at("config_digest").get<std::string>();
        h.seed = j.at("seed").get<uint64_t>();
        h.config_json = j.at("config").dump();
        for (const auto& je : j.at("entries")) {
            BlobEntry e;
            e.name = je.at("name").get<std::string>();
            e.dtype = je.at("dtype").get<std::string>();
            e.shape = je.at("shape").get<std::vector<int>>();
            e.offset = je.at("offset").get<uint64_t>();
            e.length = je.at("length").get<uint64_t>();
            h.entries.push_back(std::move(e));
        }
    } catch (const json::exception& ex) {
        fail(origin, std::string("malformed header: ") + ex.what());
    }
    if (h.format_version != 1) fail(origin, "unsupported format_version");
    return h;
}

void validate_entries(const CheckpointHeader& h, uint64_t blob_size, const std::string& origin) {
    uint64_t expect_offset = 0;
    for (const auto& e : h.entries) {
        if (e.dtype != "f32") fail(origin, "entry '" + e.name + "': unsupported dtype");
        const uint64_t elems = Tensor::count(e.shape);
        if (e.length != elems * 4) {
            fail(origin, "entry '" + e.name + "': length does not match shape");
        }
        if (e.offset != expect_offset) {
            fail(origin, "entry '" + e.name + "': offsets not contiguous");
        }
        expect_offset += e.length;
    }
    if (expect_offset != blob_size) {
        fail(origin, "declared parameter bytes (" + std::to_string(expect_offset) +
                         ") do not match blob size (" + std::to_string(blob_size) + ")");
    }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& dir, const CheckpointHeader& header,
                      const std::vector<Tensor>& tensors) {
    if (tensors.size() != header.entries.size()) {
        throw FormatError("checkpoint: tensor count does not match header entries");
    }
    std::filesystem::create_directories(dir);
    std::vector<uint8_t> blob;
    CheckpointHeader h = header;
    uint64_t offset = 0;
    for (size_t i = 0; i < tensors.size(); ++i) {
        auto& e = h.entries[i];
        const Tensor& t = tensors[i];
        if (Tensor::count(e.shape) != t.size()) {
            throw FormatError("checkpoint: entry '" + e.name + "' shape mismatch");
        }
        e.dtype = "f32";
        e.offset = offset;
        e.length = t.size() * 4;
        offset += e.length;
        for (size_t k = 0; k < t.size(); ++k) append_le(blob, static_cast<float>(t[k]));
    }
    const std::string text = header_to_json(h).dump(2) + "\n";
    write_file(dir / "header.json",
               std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
    write_file(dir / "params.bin", blob);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& dir) {
    const auto origin = (dir / "header.json").string();
    const auto bytes = read_file(dir / "header.json");
    json j = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (j.is_discarded()) fail(origin, "invalid JSON");
    return header_from_json(j, origin);
}

std::pair<CheckpointHeader, std::vector<Tensor>> read_checkpoint(
    const std::filesystem::path& dir) {
    CheckpointHeader h = read_checkpoint_header(dir);
    const auto blob_path = dir / "params.bin";
    const auto blob = read_file(blob_path);
    validate_entries(h, blob.size(), blob_path.string());
    std::vector<Tensor> tensors;
    tensors.reserve(h.entries.size());
    for (const auto& e : h.entries) {
        Tensor t(e.shape);
        for (size_t k = 0; k < t.size(); ++k) {
            t[k] = read_le<float>(blob, e.offset + k * 4, blob_path.string(), "param");
        }
        tensors.push_back(std::move(t));
    }
    return {std::move(h), std::move(tensors)};
}

// --- CSV ----------------------------------------------------------------------

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::string& header_line)
    : path_(path) {
    f_ = std::fopen(path.string().c_str(), "wb");
    if (!f_) throw FormatError(path.string() + ": cannot open for writing");
    std::fprintf(f_, "%s\n", header_line.c_str());
}

CsvWriter::~CsvWriter() {
    if (f_) std::fclose(f_);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
        std::fputs(fields[i].c_str(), f_);
        std::fputc(i + 1 < fields.size() ? ',' : '\n', f_);
    }
}

void CsvWriter::close() {
    if (f_) {
        if (std::fclose(f_) != 0) {
            f_ = nullptr;
            throw FormatError(path_.string() + ": close failed");
        }
        f_ = nullptr;
    }
}

std::string CsvWriter::fmt(double v, int sig) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", sig, v);
    return buf;
}

}  // namespace framecast::formats
