#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <string_view>

namespace blendvq {

// 64-bit FNV-1a. Used for checkpoint group hashes and freeze-contract checks.
inline uint64_t fnv1a64(const void* data, size_t size, uint64_t state = 0xcbf29ce484222325ull) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
        state ^= bytes[i];
        state *= 0x100000001b3ull;
    }
    return state;
}

inline uint64_t tensor_bytes_hash(const torch::Tensor& t, uint64_t state = 0xcbf29ce484222325ull) {
    torch::Tensor c = t.detach().contiguous().cpu();
    return fnv1a64(c.data_ptr(), static_cast<size_t>(c.numel()) * c.element_size(), state);
}

inline std::string to_hex(uint64_t value) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

// Derives a per-component seed from a run seed and a tag, so construction
// order does not affect initialization.
inline uint64_t mix_seed(uint64_t seed, std::string_view tag) {
    uint64_t h = fnv1a64(tag.data(), tag.size());
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
    uint64_t h = fnv1a64(&index, sizeof(index));
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

}  // namespace blendvq
