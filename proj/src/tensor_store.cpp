#include "casa/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "casa/errors.hpp"
#include "casa/kernels.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace casa {

namespace {

using ordered_json = nlohmann::ordered_json;

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

std::size_t raw_dtype_size(const std::string& dtype) {
    if (dtype == "F64" || dtype == "I64" || dtype == "U64") return 8;
    if (dtype == "F32" || dtype == "I32" || dtype == "U32") return 4;
    if (dtype == "F16" || dtype == "BF16" || dtype == "I16" || dtype == "U16") return 2;
    if (dtype == "I8" || dtype == "U8" || dtype == "BOOL" || dtype == "F8_E4M3" ||
        dtype == "F8_E5M2")
        return 1;
    throw FormatError("unknown tensor dtype \"" + dtype + "\"");
}

struct HeaderEntry {
    std::string name;
    std::string dtype;
    std::vector<std::int64_t> shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

std::vector<HeaderEntry> parse_header(const ordered_json& header,
                                      std::uint64_t payload_size) {
    if (!header.is_object()) throw FormatError("checkpoint header is not a JSON object");
    std::vector<HeaderEntry> entries;
    for (const auto& [name, info] : header.items()) {
        if (name == "__metadata__") continue;
        if (!info.is_object())
            throw FormatError("header entry \"" + name + "\" is not an object");
        HeaderEntry e;
        e.name = name;
        try {
            e.dtype = info.at("dtype").get<std::string>();
            e.shape = info.at("shape").get<std::vector<std::int64_t>>();
            const auto& off = info.at("data_offsets");
            if (!off.is_array() || off.size() != 2)
                throw FormatError("header entry \"" + name + "\" has malformed data_offsets");
            e.begin = off[0].get<std::uint64_t>();
            e.end = off[1].get<std::uint64_t>();
        } catch (const ordered_json::exception& ex) {
            throw FormatError("header entry \"" + name + "\": " + ex.what());
        }
        for (std::int64_t d : e.shape)
            if (d < 0) throw FormatError("header entry \"" + name + "\" has negative dim");
        if (e.end < e.begin || e.end > payload_size)
            throw FormatError("data offsets of \"" + name + "\" fall outside the file");
        const std::uint64_t expected =
            static_cast<std::uint64_t>(element_count(e.shape)) * raw_dtype_size(e.dtype);
        if (e.end - e.begin != expected)
            throw FormatError("payload size of \"" + name + "\" disagrees with its shape");
        entries.push_back(std::move(e));
    }
    return entries;
}

Matrix decode_matrix(const HeaderEntry& e, const std::uint8_t* payload) {
    const std::size_t rows = static_cast<std::size_t>(e.shape[0]);
    const std::size_t cols = static_cast<std::size_t>(e.shape[1]);
    Matrix m(rows, cols);
    const std::uint8_t* src = payload + e.begin;
    if (e.dtype == "F32") {
        for (std::size_t i = 0; i < m.size(); ++i) {
            float v;
            std::memcpy(&v, src + i * sizeof(float), sizeof(float));
            m.data()[i] = static_cast<double>(v);
        }
    } else {
        std::memcpy(m.data(), src, m.size() * sizeof(double));
    }
    if (!m.all_finite())
        throw DataError("tensor \"" + e.name + "\" contains NaN or Inf");
    return m;
}

void encode_matrix(const Matrix& m, Dtype dtype, std::vector<std::uint8_t>& out) {
    if (dtype == Dtype::F32) {
        const std::size_t base = out.size();
        out.resize(base + m.size() * sizeof(float));
        for (std::size_t i = 0; i < m.size(); ++i) {
            const float v = static_cast<float>(m.data()[i]);
            std::memcpy(out.data() + base + i * sizeof(float), &v, sizeof(float));
        }
    } else {
        const std::size_t base = out.size();
        out.resize(base + m.size() * sizeof(double));
        std::memcpy(out.data() + base, m.data(), m.size() * sizeof(double));
    }
}

void write_file(const std::string& path, const WeightMap& weights) {
    // One entry per name, matrices and raw passthrough tensors together,
    // sorted so the emitted bytes are deterministic.
    struct Pending {
        std::string name;
        std::string dtype;
        std::vector<std::int64_t> shape;
        const Matrix* matrix = nullptr;
        const RawTensor* raw = nullptr;
    };
    std::vector<Pending> pending;
    pending.reserve(weights.size() + weights.extras.size());
    for (const auto& [key, m] : weights) {
        if (!m.all_finite())
            throw DataError("tensor \"" + key + "\" contains NaN or Inf");
        Pending p;
        p.name = key;
        p.dtype = std::string(dtype_name(weights.dtype));
        p.shape = {static_cast<std::int64_t>(m.rows()),
                   static_cast<std::int64_t>(m.cols())};
        p.matrix = &m;
        pending.push_back(std::move(p));
    }
    for (const RawTensor& raw : weights.extras) {
        Pending p;
        p.name = raw.name;
        p.dtype = raw.dtype;
        p.shape = raw.shape;
        p.raw = &raw;
        pending.push_back(std::move(p));
    }
    std::sort(pending.begin(), pending.end(),
              [](const Pending& a, const Pending& b) { return a.name < b.name; });

    nlohmann::json header = nlohmann::json::object();
    std::vector<std::uint8_t> payload;
    for (const Pending& p : pending) {
        const std::uint64_t begin = payload.size();
        if (p.matrix)
            encode_matrix(*p.matrix, weights.dtype, payload);
        else
            payload.insert(payload.end(), p.raw->bytes.begin(), p.raw->bytes.end());
        const std::uint64_t end = payload.size();
        header[p.name] = {{"dtype", p.dtype},
                          {"shape", p.shape},
                          {"data_offsets", {begin, end}}};
    }

    const std::string header_text = header.dump();
    const std::uint64_t header_len = header_text.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open \"" + path + "\" for writing");
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    if (!payload.empty())
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw IoError("failed writing \"" + path + "\"");
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Decodes a single-element tensor (any shape with one element) as double.
bool decode_scalar(const RawTensor& raw, double& out) {
    if (element_count(raw.shape) != 1) return false;
    if (raw.dtype == "F32" && raw.bytes.size() == 4) {
        float v;
        std::memcpy(&v, raw.bytes.data(), 4);
        out = static_cast<double>(v);
        return true;
    }
    if (raw.dtype == "F64" && raw.bytes.size() == 8) {
        std::memcpy(&out, raw.bytes.data(), 8);
        return true;
    }
    return false;
}

} // namespace

std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

std::string_view dtype_name(Dtype d) { return d == Dtype::F32 ? "F32" : "F64"; }

std::string_view delta_kind_name(DeltaKind k) {
    switch (k) {
        case DeltaKind::fft: return "fft";
        case DeltaKind::lora: return "lora";
        case DeltaKind::casa: return "casa";
    }
    return "fft";
}

void WeightMap::insert(std::string key, Matrix value) {
    if (index_.count(key))
        throw FormatError("duplicate tensor key \"" + key + "\"");
    if (value.rows() == 0 || value.cols() == 0)
        throw ShapeError("tensor \"" + key + "\" has a zero dimension");
    index_.emplace(key, items_.size());
    items_.emplace_back(std::move(key), std::move(value));
}

bool WeightMap::contains(std::string_view key) const {
    return index_.count(std::string(key)) > 0;
}

const Matrix* WeightMap::find(std::string_view key) const {
    auto it = index_.find(std::string(key));
    return it == index_.end() ? nullptr : &items_[it->second].second;
}

const Matrix& WeightMap::at(std::string_view key) const {
    const Matrix* m = find(key);
    if (!m) throw KeyError("no tensor named \"" + std::string(key) + "\"");
    return *m;
}

std::vector<std::string> WeightMap::keys() const {
    std::vector<std::string> out;
    out.reserve(items_.size());
    for (const auto& [key, _] : items_) out.push_back(key);
    return out;
}

Matrix LoraPair::materialize() const {
    const double factor = alpha / static_cast<double>(rank());
    return kernels::scale(kernels::matmul(b, a), factor);
}

void LoraAdapter::insert(std::string base_key, LoraPair pair) {
    if (index_.count(base_key))
        throw PairingError("duplicate adapter pair for \"" + base_key + "\"");
    index_.emplace(base_key, items_.size());
    items_.emplace_back(std::move(base_key), std::move(pair));
}

const LoraPair* LoraAdapter::find(std::string_view base_key) const {
    auto it = index_.find(std::string(base_key));
    return it == index_.end() ? nullptr : &items_[it->second].second;
}

WeightMap load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open \"" + path + "\"");
    in.seekg(0, std::ios::end);
    const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);
    if (file_size < 8) throw FormatError("file shorter than the 8-byte header length");

    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (header_len > file_size - 8)
        throw FormatError("header length field exceeds file size");

    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));

    ordered_json header;
    try {
        header = ordered_json::parse(header_text);
    } catch (const ordered_json::exception& ex) {
        throw FormatError(std::string("header is not valid JSON: ") + ex.what());
    }

    const std::uint64_t payload_size = file_size - 8 - header_len;
    std::vector<std::uint8_t> payload(payload_size);
    if (payload_size > 0)
        in.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload_size));
    if (!in) throw IoError("failed reading \"" + path + "\"");

    WeightMap weights;
    weights.source_path = path;
    bool dtype_set = false;
    for (const HeaderEntry& e : parse_header(header, payload_size)) {
        const bool pipeline_dtype = e.dtype == "F32" || e.dtype == "F64";
        if (e.shape.size() == 2 && pipeline_dtype) {
            weights.insert(e.name, decode_matrix(e, payload.data()));
            if (!dtype_set) {
                weights.dtype = e.dtype == "F32" ? Dtype::F32 : Dtype::F64;
                dtype_set = true;
            }
        } else {
            RawTensor raw;
            raw.name = e.name;
            raw.dtype = e.dtype;
            raw.shape = e.shape;
            raw.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(e.begin),
                             payload.begin() + static_cast<std::ptrdiff_t>(e.end));
            weights.extras.push_back(std::move(raw));
        }
    }
    return weights;
}

void save_checkpoint(const WeightMap& weights, const std::string& path) {
    write_file(path, weights);
}

void save_checkpoint(const DeltaMap& delta, const std::string& path) {
    write_file(path, delta.entries);
}

LoraAdapter pair_lora(const WeightMap& raw, LoraConvention convention) {
    struct Suffixes {
        std::string_view a, b;
    };
    const Suffixes ab{".lora_A.weight", ".lora_B.weight"};
    const Suffixes updown{".lora_down.weight", ".lora_up.weight"};

    if (convention == LoraConvention::auto_detect) {
        convention = LoraConvention::lora_ab;
        for (const auto& [key, _] : raw) {
            if (ends_with(key, ab.a) || ends_with(key, ab.b)) {
                convention = LoraConvention::lora_ab;
                break;
            }
            if (ends_with(key, updown.a) || ends_with(key, updown.b)) {
                convention = LoraConvention::lora_updown;
                break;
            }
        }
    }
    const Suffixes& sfx = convention == LoraConvention::lora_ab ? ab : updown;

    // Base keys in file order of first appearance.
    std::vector<std::string> bases;
    std::unordered_map<std::string, const Matrix*> a_of, b_of;
    std::vector<std::string> unmatched;
    auto note_base = [&](const std::string& base) {
        if (!a_of.count(base) && !b_of.count(base)) bases.push_back(base);
    };
    for (const auto& [key, m] : raw) {
        if (ends_with(key, sfx.a)) {
            const std::string base = key.substr(0, key.size() - sfx.a.size());
            note_base(base);
            a_of[base] = &m;
        } else if (ends_with(key, sfx.b)) {
            const std::string base = key.substr(0, key.size() - sfx.b.size());
            note_base(base);
            b_of[base] = &m;
        } else if (key.find("lora") != std::string::npos) {
            unmatched.push_back(key);
        }
    }

    LoraAdapter adapter;
    adapter.convention = convention;
    adapter.dtype = raw.dtype;
    adapter.unmatched_keys = std::move(unmatched);
    for (const std::string& base : bases) {
        auto ai = a_of.find(base);
        auto bi = b_of.find(base);
        if (ai == a_of.end() || bi == b_of.end())
            throw PairingError("LoRA pair for \"" + base + "\" is missing its " +
                               (ai == a_of.end() ? "A/down" : "B/up") + " factor");
        const Matrix& a = *ai->second;
        const Matrix& b = *bi->second;
        if (b.cols() != a.rows())
            throw PairingError("LoRA pair for \"" + base + "\" has mismatched ranks (A " +
                               std::to_string(a.rows()) + ", B " + std::to_string(b.cols()) +
                               ")");
        LoraPair pair;
        pair.a = a;
        pair.b = b;
        pair.alpha = static_cast<double>(a.rows());
        // Alpha may be stored as a 1x1 matrix or as a scalar extra.
        const std::string alpha_key = base + ".alpha";
        if (const Matrix* am = raw.find(alpha_key);
            am && am->rows() == 1 && am->cols() == 1) {
            pair.alpha = (*am)(0, 0);
            pair.alpha_explicit = true;
        } else {
            for (const RawTensor& extra : raw.extras) {
                double v;
                if (extra.name == alpha_key && decode_scalar(extra, v)) {
                    pair.alpha = v;
                    pair.alpha_explicit = true;
                    break;
                }
            }
        }
        adapter.insert(base, std::move(pair));
    }
    return adapter;
}

WeightMap adapter_to_weights(const LoraAdapter& adapter) {
    const bool ab = adapter.convention != LoraConvention::lora_updown;
    WeightMap out;
    out.dtype = adapter.dtype;
    for (const auto& [base, pair] : adapter) {
        out.insert(base + (ab ? ".lora_A.weight" : ".lora_down.weight"), pair.a);
        out.insert(base + (ab ? ".lora_B.weight" : ".lora_up.weight"), pair.b);
        if (pair.alpha_explicit) {
            RawTensor alpha;
            alpha.name = base + ".alpha";
            alpha.dtype = std::string(dtype_name(adapter.dtype));
            alpha.shape = {};
            if (adapter.dtype == Dtype::F32) {
                const float v = static_cast<float>(pair.alpha);
                alpha.bytes.resize(4);
                std::memcpy(alpha.bytes.data(), &v, 4);
            } else {
                alpha.bytes.resize(8);
                std::memcpy(alpha.bytes.data(), &pair.alpha, 8);
            }
            out.extras.push_back(std::move(alpha));
        }
    }
    return out;
}

DeltaMap compute_fft_delta(const WeightMap& source, const WeightMap& target) {
    DeltaMap delta;
    delta.kind = DeltaKind::fft;
    delta.entries.dtype = source.dtype;
    for (const auto& [key, ws] : source) {
        const Matrix* wt = target.find(key);
        if (!wt) {
            delta.unmatched_keys.push_back(key);
            continue;
        }
        if (!ws.same_shape(*wt))
            throw ShapeError("layer \"" + key + "\" has shape " +
                             std::to_string(ws.rows()) + "x" + std::to_string(ws.cols()) +
                             " in the source but " + std::to_string(wt->rows()) + "x" +
                             std::to_string(wt->cols()) + " in the target");
        delta.entries.insert(key, kernels::axpby(1.0, *wt, -1.0, ws));
    }
    for (const auto& [key, _] : target)
        if (!source.contains(key)) delta.unmatched_keys.push_back(key);
    return delta;
}

DeltaMap materialize_lora_delta(const LoraAdapter& adapter) {
    DeltaMap delta;
    delta.kind = DeltaKind::lora;
    delta.entries.dtype = adapter.dtype;
    for (const auto& [base, pair] : adapter)
        delta.entries.insert(base, pair.materialize());
    return delta;
}

} // namespace casa
