#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace atlas::util {

/// Incremental SHA-256 (OpenSSL EVP). Hex digests are used as artifact
/// fingerprints throughout the pipeline.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::string_view bytes);
    void update(const void* data, size_t size);
    std::string hex_digest();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

} // namespace atlas::util
