#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "casa/matrix.hpp"

namespace casa {

enum class Dtype { F32, F64 };

std::size_t dtype_size(Dtype d);
std::string_view dtype_name(Dtype d);

// Tensors that do not enter the pipeline (non-2-D, or unsupported dtype)
// are carried through bit-exactly so saved checkpoints keep them intact.
struct RawTensor {
    std::string name;
    std::string dtype;
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;
};

// Named collection of 2-D weight matrices. Iteration order is the order
// the keys appeared in the checkpoint header; keys are unique.
class WeightMap {
public:
    void insert(std::string key, Matrix value);

    bool contains(std::string_view key) const;
    const Matrix* find(std::string_view key) const;
    const Matrix& at(std::string_view key) const; // throws KeyError

    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }

    auto begin() const noexcept { return items_.begin(); }
    auto end() const noexcept { return items_.end(); }

    std::vector<std::string> keys() const;

    Dtype dtype = Dtype::F32;
    std::string source_path;
    // Non-2-D tensors skipped at load, preserved for passthrough on save.
    std::vector<RawTensor> extras;

private:
    std::vector<std::pair<std::string, Matrix>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class DeltaKind { fft, lora, casa };

std::string_view delta_kind_name(DeltaKind k);

struct DeltaMap {
    WeightMap entries;
    DeltaKind kind = DeltaKind::fft;
    // Keys found in only one of the two models (compute_fft_delta).
    std::vector<std::string> unmatched_keys;
};

enum class LoraConvention { auto_detect, lora_ab, lora_updown };

struct LoraPair {
    Matrix a;     // rank x d_in (the "down" factor)
    Matrix b;     // d_out x rank (the "up" factor)
    double alpha; // effective update is (alpha / rank) * b * a
    bool alpha_explicit = false;

    std::size_t rank() const noexcept { return a.rows(); }
    Matrix materialize() const;
};

class LoraAdapter {
public:
    void insert(std::string base_key, LoraPair pair);

    const LoraPair* find(std::string_view base_key) const;

    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    auto begin() const noexcept { return items_.begin(); }
    auto end() const noexcept { return items_.end(); }

    LoraConvention convention = LoraConvention::lora_ab;
    Dtype dtype = Dtype::F32;
    // LoRA-looking keys that could not be paired into (A, B, alpha).
    std::vector<std::string> unmatched_keys;

private:
    std::vector<std::pair<std::string, LoraPair>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Checkpoint layout: 8-byte little-endian header length, JSON header
// mapping tensor names to {dtype, shape, data_offsets}, raw tensor bytes.
WeightMap load_checkpoint(const std::string& path);

// Writes the same layout. Header keys are sorted and the JSON is compact,
// so output bytes are a pure function of the contents.
void save_checkpoint(const WeightMap& weights, const std::string& path);
void save_checkpoint(const DeltaMap& delta, const std::string& path);

LoraAdapter pair_lora(const WeightMap& raw,
                      LoraConvention convention = LoraConvention::auto_detect);

// Serializes an adapter back to checkpoint form in its naming convention.
WeightMap adapter_to_weights(const LoraAdapter& adapter);

DeltaMap compute_fft_delta(const WeightMap& source, const WeightMap& target);

DeltaMap materialize_lora_delta(const LoraAdapter& adapter);

} // namespace casa
