#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fracdiag/tensor.hpp"

namespace fracdiag {

enum class DType { f32, f64 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);
DType parse_dtype(std::string_view name);

struct TensorRecord {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::size_t> shape;
    std::uint64_t byte_offset = 0;  // relative to the payload region
    std::uint64_t byte_length = 0;

    bool operator==(const TensorRecord&) const = default;
};

struct EpochSnapshot {
    std::uint64_t epoch = 0;
    double loss = 0.0;
    std::vector<TensorRecord> tensors;  // layout order

    const TensorRecord* find(std::string_view name) const;
    bool operator==(const EpochSnapshot&) const = default;
};

struct RunManifest {
    std::string run_id;
    std::string created_utc;
    std::string model_desc;
    std::uint64_t seed = 0;
    std::vector<EpochSnapshot> epochs;

    bool operator==(const RunManifest&) const = default;
};

// Container constants.
inline constexpr char kMagic[4] = {'F', 'S', 'N', 'P'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 16;

// Throws Error(invariant_violation) describing the first broken rule.
// Offsets must be contiguous in declaration order when `require_contiguous`.
void validate_manifest(const RunManifest& manifest, bool require_contiguous);

// Fills byte_length and byte_offset of every record so payloads are packed
// contiguously in manifest order.
void assign_offsets(RunManifest& manifest);

std::vector<std::byte> encode_values(std::span<const double> values, DType dtype);
std::vector<double> decode_values(std::span<const std::byte> bytes, DType dtype);

// Immutable, fully validated run. Payload bytes are held in memory and
// decoded on request.
class RunArchive {
public:
    RunArchive() = default;
    RunArchive(RunManifest manifest, std::vector<std::byte> payload);

    const RunManifest& manifest() const { return manifest_; }
    std::span<const std::byte> payload() const { return payload_; }

    const EpochSnapshot& epoch(std::uint64_t epoch) const;
    bool has_epoch(std::uint64_t epoch) const;
    bool has_tensor(std::uint64_t epoch, std::string_view name) const;
    std::span<const std::byte> bytes(const TensorRecord& record) const;
    Tensor tensor(std::uint64_t epoch, std::string_view name) const;

private:
    RunManifest manifest_;
    std::vector<std::byte> payload_;
};

// Returns the payload bytes of one record; called once per record in order.
using PayloadProvider =
    std::function<std::vector<std::byte>(const EpochSnapshot&, const TensorRecord&)>;

void write_run(const RunManifest& manifest, const PayloadProvider& provider,
               const std::filesystem::path& path);
void write_run(const RunArchive& run, const std::filesystem::path& path);

std::vector<std::byte> serialize_run(const RunManifest& manifest, const PayloadProvider& provider);
RunArchive parse_run(std::span<const std::byte> file);
RunArchive read_run(const std::filesystem::path& path);

Tensor get_tensor(const RunArchive& run, std::uint64_t epoch, std::string_view name);

// Directory layout for external trainers: manifest.json plus one raw
// little-endian .bin file per tensor (see README).
RunArchive ingest_directory(const std::filesystem::path& dir);

// Reads a .fsnp container, or ingests when `path` is a directory.
RunArchive open_run(const std::filesystem::path& path);

// Accumulates snapshots in memory; offsets are assigned on finish().
class RunBuilder {
public:
    RunBuilder(std::string run_id, std::string created_utc, std::string model_desc,
               std::uint64_t seed);

    void begin_epoch(std::uint64_t epoch, double loss);
    void add_tensor(std::string name, DType dtype, const Tensor& tensor);
    RunArchive finish() const;

private:
    RunManifest manifest_;
    std::vector<std::vector<std::vector<std::byte>>> payloads_;
};

}  // namespace fracdiag
