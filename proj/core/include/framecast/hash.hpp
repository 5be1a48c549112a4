#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace framecast {

// FNV-1a, used for dataset checksums, config digests and parameter digests.
class Fnv1a {
public:
    void update(const void* data, size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }

    void update(std::string_view s) { update(s.data(), s.size()); }

    uint64_t value() const { return hash_; }

    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        uint64_t h = hash_;
        for (int i = 15; i >= 0; --i) {
            out[static_cast<size_t>(i)] = digits[h & 0xf];
            h >>= 4;
        }
        return out;
    }

private:
    uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string fnv1a_hex(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.hex();
}

}  // namespace framecast
