#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "framecast/types.hpp"

namespace framecast::formats {

// Raised for any malformed or truncated input; the message names the file
// (when known) and the violated field.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes);

// --- PGM (binary P5, 8-bit, single canonical encoding) ---------------------
// Header is exactly "P5\n<width> <height>\n255\n"; pixel payload row-major.
std::vector<uint8_t> encode_pgm(const Tensor& image01);
Tensor decode_pgm(std::span<const uint8_t> bytes, const std::string& origin = "<memory>");
void write_pgm(const std::filesystem::path& path, const Tensor& image01);
Tensor read_pgm(const std::filesystem::path& path);

// --- .flo ------------------------------------------------------------------
// Little-endian: float32 magic 202021.25, int32 width, int32 height, then
// H*W interleaved float32 (u, v) pairs, row-major.
inline constexpr float kFloMagic = 202021.25f;

std::vector<uint8_t> encode_flo(const FlowField& flow);
FlowField decode_flo(std::span<const uint8_t> bytes, const std::string& origin = "<memory>");
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

// --- checkpoint blob -------------------------------------------------------
// A checkpoint directory holds header.json plus params.bin, a little-endian
// float32 blob concatenated in header entry order. Offsets must be contiguous
// and the declared total must equal the blob size; violations are rejected
// before any parameter is loaded.
struct BlobEntry {
    std::string name;
    std::string dtype;  // "f32"
    std::vector<int> shape;
    uint64_t offset = 0;
    uint64_t length = 0;  // bytes
};

struct CheckpointHeader {
    int format_version = 1;
    std::string config_digest;
    uint64_t seed = 0;
    std::string config_json;  // config snapshot, verbatim JSON text
    std::vector<BlobEntry> entries;
};

void write_checkpoint(const std::filesystem::path& dir, const CheckpointHeader& header,
                      const std::vector<Tensor>& tensors);
// Validates the header against the blob, then decodes tensors in entry order.
std::pair<CheckpointHeader, std::vector<Tensor>> read_checkpoint(const std::filesystem::path& dir);
CheckpointHeader read_checkpoint_header(const std::filesystem::path& dir);

// --- CSV -------------------------------------------------------------------
// Minimal writer with deterministic float formatting ("%.9g" unless noted).
class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path, const std::string& header_line);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    void row(const std::vector<std::string>& fields);
    void close();

    static std::string fmt(double v, int sig = 9);

private:
    std::FILE* f_ = nullptr;
    std::filesystem::path path_;
};

}  // namespace framecast::formats
