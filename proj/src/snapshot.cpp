#include "fracdiag/snapshot.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "fracdiag/error.hpp"

namespace fracdiag {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename UInt>
UInt to_little(UInt v) {
    if constexpr (std::endian::native == std::endian::big) {
        UInt out = 0;
        for (std::size_t i = 0; i < sizeof(UInt); ++i) {
            out = static_cast<UInt>((out << 8) | ((v >> (8 * i)) & 0xFF));
        }
        return out;
    }
    return v;
}

template <typename UInt>
void put_le(std::vector<std::byte>& out, UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
    }
}

template <typename UInt>
UInt get_le(std::span<const std::byte> in, std::size_t offset) {
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        v |= static_cast<UInt>(std::to_integer<unsigned>(in[offset + i])) << (8 * i);
    }
    return v;
}

std::size_t align_up(std::size_t n, std::size_t a) { return (n + a - 1) / a * a; }

ordered_json record_to_json(const TensorRecord& r) {
    ordered_json j;
    j["name"] = r.name;
    j["dtype"] = dtype_name(r.dtype);
    j["shape"] = r.shape;
    j["byte_offset"] = r.byte_offset;
    j["byte_length"] = r.byte_length;
    return j;
}

ordered_json manifest_to_json(const RunManifest& m) {
    ordered_json j;
    j["run_id"] = m.run_id;
    j["created_utc"] = m.created_utc;
    j["model_desc"] = m.model_desc;
    j["seed"] = m.seed;
    j["epochs"] = ordered_json::array();
    for (const auto& e : m.epochs) {
        ordered_json ej;
        ej["epoch"] = e.epoch;
        ej["loss"] = e.loss;
        ej["tensors"] = ordered_json::array();
        for (const auto& r : e.tensors) ej["tensors"].push_back(record_to_json(r));
        j["epochs"].push_back(std::move(ej));
    }
    return j;
}

template <typename T>
T field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) {
        throw Error(ErrorCode::malformed_header, std::string("header missing field '") + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorCode::malformed_header, std::string("header field '") + key + "' has wrong type");
    }
}

std::uint64_t unsigned_field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key) || !j.at(key).is_number_unsigned()) {
        throw Error(ErrorCode::malformed_header,
                    std::string("header field '") + key + "' must be a non-negative integer");
    }
    return j.at(key).get<std::uint64_t>();
}

std::vector<std::size_t> shape_field(const json& j) {
    if (!j.contains("shape") || !j.at("shape").is_array()) {
        throw Error(ErrorCode::malformed_header, "tensor record missing 'shape' array");
    }
    std::vector<std::size_t> shape;
    for (const auto& d : j.at("shape")) {
        if (!d.is_number_unsigned()) {
            throw Error(ErrorCode::malformed_header, "shape entries must be non-negative integers");
        }
        shape.push_back(d.get<std::size_t>());
    }
    return shape;
}

DType dtype_field(const json& j) {
    auto name = field<std::string>(j, "dtype");
    if (name != "f32" && name != "f64") {
        throw Error(ErrorCode::malformed_header, "unknown dtype '" + name + "'");
    }
    return parse_dtype(name);
}

// Shared by container and directory ingestion. `with_extents` selects
// whether byte_offset/byte_length are read.
RunManifest manifest_from_json(const json& j, bool with_extents,
                               std::vector<std::vector<std::string>>* files = nullptr) {
    if (!j.is_object()) throw Error(ErrorCode::malformed_header, "header is not a JSON object");
    RunManifest m;
    m.run_id = field<std::string>(j, "run_id");
    m.created_utc = field<std::string>(j, "created_utc");
    m.model_desc = field<std::string>(j, "model_desc");
    m.seed = unsigned_field(j, "seed");
    if (!j.contains("epochs") || !j.at("epochs").is_array()) {
        throw Error(ErrorCode::malformed_header, "header missing 'epochs' array");
    }
    for (const auto& ej : j.at("epochs")) {
        EpochSnapshot e;
        e.epoch = unsigned_field(ej, "epoch");
        if (!ej.contains("loss") || !ej.at("loss").is_number()) {
            throw Error(ErrorCode::malformed_header, "epoch entry missing numeric 'loss'");
        }
        e.loss = ej.at("loss").get<double>();
        if (!ej.contains("tensors") || !ej.at("tensors").is_array()) {
            throw Error(ErrorCode::malformed_header, "epoch entry missing 'tensors' array");
        }
        if (files) files->emplace_back();
        for (const auto& tj : ej.at("tensors")) {
            TensorRecord r;
            r.name = field<std::string>(tj, "name");
            r.dtype = dtype_field(tj);
            r.shape = shape_field(tj);
            if (with_extents) {
                r.byte_offset = unsigned_field(tj, "byte_offset");
                r.byte_length = unsigned_field(tj, "byte_length");
            }
            if (files) files->back().push_back(field<std::string>(tj, "file"));
            e.tensors.push_back(std::move(r));
        }
        m.epochs.push_back(std::move(e));
    }
    return m;
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::byte> out(raw.size());
    if (!raw.empty()) std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

std::string describe(const EpochSnapshot& e, const TensorRecord& r) {
    return "epoch " + std::to_string(e.epoch) + " tensor '" + r.name + "'";
}

}  // namespace

std::size_t dtype_size(DType dtype) { return dtype == DType::f32 ? 4 : 8; }

std::string_view dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view name) {
    if (name == "f32") return DType::f32;
    if (name == "f64") return DType::f64;
    throw Error(ErrorCode::invalid_argument, "unknown dtype '" + std::string(name) + "'");
}

const TensorRecord* EpochSnapshot::find(std::string_view name) const {
    for (const auto& r : tensors) {
        if (r.name == name) return &r;
    }
    return nullptr;
}

void validate_manifest(const RunManifest& manifest, bool require_contiguous) {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::invariant_violation, msg); };
    std::uint64_t cursor = 0;
    for (std::size_t k = 0; k < manifest.epochs.size(); ++k) {
        const auto& e = manifest.epochs[k];
        if (k == 0 && e.epoch > 1) fail("first epoch must be 0 or 1, got " + std::to_string(e.epoch));
        if (k > 0 && e.epoch <= manifest.epochs[k - 1].epoch) {
            fail("epochs must be strictly increasing at epoch " + std::to_string(e.epoch));
        }
        if (!std::isfinite(e.loss) || e.loss < 0.0) {
            fail("epoch " + std::to_string(e.epoch) + " loss must be finite and non-negative");
        }
        std::set<std::string_view> names;
        bool has_grads = false;
        for (const auto& r : e.tensors) {
            if (r.shape.empty() || r.shape.size() > 4) fail(describe(e, r) + " must have 1-4 dimensions");
            for (auto d : r.shape) {
                if (d == 0) fail(describe(e, r) + " has a zero-sized dimension");
            }
            auto expected = Tensor::element_count(r.shape) * dtype_size(r.dtype);
            if (r.byte_length != expected) {
                fail(describe(e, r) + " byte_length " + std::to_string(r.byte_length) +
                     " != " + std::to_string(expected));
            }
            if (!names.insert(r.name).second) fail(describe(e, r) + " is duplicated");
            if (r.name.ends_with(".grad")) has_grads = true;
            if (require_contiguous) {
                if (r.byte_offset != cursor) fail(describe(e, r) + " is not packed contiguously");
                cursor += r.byte_length;
            }
        }
        if (has_grads) {
            for (const auto& r : e.tensors) {
                if (!r.name.ends_with(".weight")) continue;
                auto layer = r.name.substr(0, r.name.size() - 7);
                const auto* g = e.find(layer + ".grad");
                if (!g || g->shape != r.shape) fail(describe(e, r) + " lacks a same-shape gradient");
            }
        }
    }
}

void assign_offsets(RunManifest& manifest) {
    std::uint64_t cursor = 0;
    for (auto& e : manifest.epochs) {
        for (auto& r : e.tensors) {
            r.byte_length = Tensor::element_count(r.shape) * dtype_size(r.dtype);
            r.byte_offset = cursor;
            cursor += r.byte_length;
        }
    }
}

std::vector<std::byte> encode_values(std::span<const double> values, DType dtype) {
    std::vector<std::byte> out;
    out.reserve(values.size() * dtype_size(dtype));
    for (double v : values) {
        if (dtype == DType::f32) {
            put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
            put_le(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

std::vector<double> decode_values(std::span<const std::byte> bytes, DType dtype) {
    const auto width = dtype_size(dtype);
    std::vector<double> out(bytes.size() / width);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (dtype == DType::f32) {
            out[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, i * width));
        } else {
            out[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, i * width));
        }
    }
    return out;
}

RunArchive::RunArchive(RunManifest manifest, std::vector<std::byte> payload)
    : manifest_(std::move(manifest)), payload_(std::move(payload)) {}

bool RunArchive::has_epoch(std::uint64_t epoch) const {
    return std::any_of(manifest_.epochs.begin(), manifest_.epochs.end(),
                       [&](const EpochSnapshot& e) { return e.epoch == epoch; });
}

const EpochSnapshot& RunArchive::epoch(std::uint64_t epoch) const {
    for (const auto& e : manifest_.epochs) {
        if (e.epoch == epoch) return e;
    }
    throw Error(ErrorCode::not_found, "epoch " + std::to_string(epoch) + " not found");
}

bool RunArchive::has_tensor(std::uint64_t epoch, std::string_view name) const {
    return has_epoch(epoch) && this->epoch(epoch).find(name) != nullptr;
}

std::span<const std::byte> RunArchive::bytes(const TensorRecord& record) const {
    return std::span<const std::byte>(payload_).subspan(record.byte_offset, record.byte_length);
}

Tensor RunArchive::tensor(std::uint64_t epoch, std::string_view name) const {
    const auto& e = this->epoch(epoch);
    const auto* r = e.find(name);
    if (!r) {
        throw Error(ErrorCode::not_found,
                    "tensor not found: '" + std::string(name) + "' in epoch " + std::to_string(epoch));
    }
    return Tensor{r->shape, decode_values(bytes(*r), r->dtype)};
}

Tensor get_tensor(const RunArchive& run, std::uint64_t epoch, std::string_view name) {
    return run.tensor(epoch, name);
}

std::vector<std::byte> serialize_run(const RunManifest& manifest, const PayloadProvider& provider) {
    validate_manifest(manifest, true);
    // Collect every payload before emitting so a bad provider cannot leave a
    // half-written container behind.
    std::vector<std::vector<std::byte>> blobs;
    for (const auto& e : manifest.epochs) {
        for (const auto& r : e.tensors) {
            auto blob = provider(e, r);
            if (blob.size() != r.byte_length) {
                throw Error(ErrorCode::invariant_violation,
                            describe(e, r) + " payload is " + std::to_string(blob.size()) +
                                " bytes, record declares " + std::to_string(r.byte_length));
            }
            blobs.push_back(std::move(blob));
        }
    }
    const auto header = manifest_to_json(manifest).dump();
    std::vector<std::byte> out;
    for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
    put_le<std::uint16_t>(out, kFormatVersion);
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    for (char c : header) out.push_back(static_cast<std::byte>(c));
    out.resize(align_up(out.size(), kPayloadAlignment), std::byte{0});
    for (const auto& blob : blobs) out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

void write_run(const RunManifest& manifest, const PayloadProvider& provider,
               const std::filesystem::path& path) {
    auto bytes = serialize_run(manifest, provider);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

void write_run(const RunArchive& run, const std::filesystem::path& path) {
    write_run(
        run.manifest(),
        [&](const EpochSnapshot&, const TensorRecord& r) {
            auto span = run.bytes(r);
            return std::vector<std::byte>(span.begin(), span.end());
        },
        path);
}

RunArchive parse_run(std::span<const std::byte> file) {
    if (file.size() < 4 || std::memcmp(file.data(), kMagic, 4) != 0) {
        throw Error(ErrorCode::bad_magic, "bad magic: not an FSNP container");
    }
    if (file.size() < 12) throw Error(ErrorCode::malformed_header, "container shorter than its fixed header");
    const auto version = get_le<std::uint16_t>(file, 4);
    if (version != kFormatVersion) {
        throw Error(ErrorCode::unsupported_version, "unsupported format version " + std::to_string(version));
    }
    if (get_le<std::uint16_t>(file, 6) != 0) throw Error(ErrorCode::malformed_header, "reserved bytes are not zero");
    const std::size_t header_len = get_le<std::uint32_t>(file, 8);
    if (12 + header_len > file.size()) {
        throw Error(ErrorCode::malformed_header, "header length exceeds file size");
    }
    std::string text(reinterpret_cast<const char*>(file.data() + 12), header_len);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::malformed_header, std::string("header JSON malformed: ") + ex.what());
    }
    auto manifest = manifest_from_json(j, true);

    const std::size_t payload_start = std::min(align_up(12 + header_len, kPayloadAlignment), file.size());
    const std::size_t payload_size = file.size() - payload_start;

    std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
    for (const auto& e : manifest.epochs) {
        for (const auto& r : e.tensors) {
            if (r.byte_offset > payload_size || r.byte_length > payload_size - r.byte_offset) {
                throw Error(ErrorCode::truncated_payload,
                            "truncated payload: " + describe(e, r) + " extends past end of file");
            }
            if (r.byte_length > 0) extents.emplace_back(r.byte_offset, r.byte_offset + r.byte_length);
        }
    }
    std::sort(extents.begin(), extents.end());
    for (std::size_t k = 1; k < extents.size(); ++k) {
        if (extents[k].first < extents[k - 1].second) {
            throw Error(ErrorCode::overlapping_extents,
                        "overlapping tensor extents at payload offset " + std::to_string(extents[k].first));
        }
    }
    validate_manifest(manifest, false);
    auto payload = file.subspan(payload_start);
    return RunArchive(std::move(manifest), std::vector<std::byte>(payload.begin(), payload.end()));
}

RunArchive read_run(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) {
        throw Error(ErrorCode::io, "run file not found: '" + path.string() + "'");
    }
    return parse_run(read_file(path));
}

RunArchive ingest_directory(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::is_regular_file(manifest_path)) {
        throw Error(ErrorCode::io, "no manifest.json in '" + dir.string() + "'");
    }
    auto raw = read_file(manifest_path);
    json j;
    try {
        j = json::parse(std::string(reinterpret_cast<const char*>(raw.data()), raw.size()));
    } catch (const json::exception& ex) {
        throw Error(ErrorCode::malformed_header, std::string("manifest.json malformed: ") + ex.what());
    }
    std::vector<std::vector<std::string>> files;
    auto manifest = manifest_from_json(j, false, &files);
    assign_offsets(manifest);
    validate_manifest(manifest, true);

    std::vector<std::byte> payload;
    for (std::size_t k = 0; k < manifest.epochs.size(); ++k) {
        const auto& e = manifest.epochs[k];
        for (std::size_t t = 0; t < e.tensors.size(); ++t) {
            const auto& r = e.tensors[t];
            auto blob = read_file(dir / files[k][t]);
            if (blob.size() != r.byte_length) {
                throw Error(ErrorCode::truncated_payload,
                            "truncated payload: " + describe(e, r) + " file holds " +
                                std::to_string(blob.size()) + " bytes, expected " +
                                std::to_string(r.byte_length));
            }
            payload.insert(payload.end(), blob.begin(), blob.end());
        }
    }
    return RunArchive(std::move(manifest), std::move(payload));
}

RunArchive open_run(const std::filesystem::path& path) {
    if (std::filesystem::is_directory(path)) return ingest_directory(path);
    return read_run(path);
}

RunBuilder::RunBuilder(std::string run_id, std::string created_utc, std::string model_desc,
                       std::uint64_t seed) {
    manifest_.run_id = std::move(run_id);
    manifest_.created_utc = std::move(created_utc);
    manifest_.model_desc = std::move(model_desc);
    manifest_.seed = seed;
}

void RunBuilder::begin_epoch(std::uint64_t epoch, double loss) {
    manifest_.epochs.push_back(EpochSnapshot{epoch, loss, {}});
    payloads_.emplace_back();
}

void RunBuilder::add_tensor(std::string name, DType dtype, const Tensor& tensor) {
    if (manifest_.epochs.empty()) throw Error(ErrorCode::usage, "add_tensor called before begin_epoch");
    TensorRecord r;
    r.name = std::move(name);
    r.dtype = dtype;
    r.shape = tensor.shape;
    manifest_.epochs.back().tensors.push_back(std::move(r));
    payloads_.back().push_back(encode_values(tensor.values, dtype));
}

RunArchive RunBuilder::finish() const {
    auto manifest = manifest_;
    assign_offsets(manifest);
    validate_manifest(manifest, true);
    std::vector<std::byte> payload;
    for (const auto& epoch : payloads_) {
        for (const auto& blob : epoch) payload.insert(payload.end(), blob.begin(), blob.end());
    }
    return RunArchive(std::move(manifest), std::move(payload));
}

}  // namespace fracdiag
