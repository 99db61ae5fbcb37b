#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "htrise/bht.hpp"
#include "htrise/metrics.hpp"

namespace htrise::io {

using nlohmann::json;

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr char kBatchMagic[4] = {'B', 'H', 'T', 'B'};
inline constexpr char kStateMagic[4] = {'H', 'T', 'R', 'S'};

/// One streamed unit in the normalization ledger: which slice range it owns
/// and how to undo its normalization.
struct UnitRecord {
    Index first = 0;  ///< 1-based index of the unit's first tensor
    Index count = 0;
    std::string source;
    NormalizationParams norm;

    bool operator==(const UnitRecord&) const = default;
};

/// Everything the CLI persists between batches: the representation itself,
/// the per-unit normalization ledger, and how many input batches went in.
struct RepresentationState {
    HTRepresentation rep;
    std::vector<UnitRecord> units;
    Index batches_processed = 0;
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline void put_f64_block(std::string& out, const double* v, Index count) {
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(v),
                   static_cast<std::size_t>(count) * 8);
    } else {
        for (Index i = 0; i < count; ++i) put_f64(out, v[i]);
    }
}

class Reader {
public:
    Reader(const std::string& path, const char magic[4]) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error(path + ": cannot open");
        buf_.assign(std::istreambuf_iterator<char>(in),
                    std::istreambuf_iterator<char>());
        if (buf_.size() < 10) throw std::runtime_error(path + ": truncated header");
        if (std::memcmp(buf_.data(), magic, 4) != 0) {
            throw std::runtime_error(path + ": bad magic");
        }
        pos_ = 4;
        const std::uint16_t version = u16();
        if (version > kFormatVersion) {
            throw std::runtime_error(path + ": unsupported format version " +
                                     std::to_string(version));
        }
        const std::uint32_t hlen = u32();
        if (buf_.size() < pos_ + hlen) {
            throw std::runtime_error(path + ": truncated header");
        }
        header_ = json::parse(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                              buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + hlen));
        pos_ += hlen;
    }

    const json& header() const { return header_; }

    Vector read_payload(Index count) {
        if (buf_.size() < pos_ + static_cast<std::size_t>(count) * 8) {
            throw std::runtime_error(path_ + ": truncated payload");
        }
        Vector v(count);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(v.data(), buf_.data() + pos_,
                        static_cast<std::size_t>(count) * 8);
            pos_ += static_cast<std::size_t>(count) * 8;
        } else {
            for (Index i = 0; i < count; ++i) {
                std::uint64_t bits = 0;
                for (int b = 0; b < 8; ++b) {
                    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(
                                buf_[pos_ + static_cast<std::size_t>(b)]))
                            << (8 * b);
                }
                std::memcpy(&v[i], &bits, 8);
                pos_ += 8;
            }
        }
        return v;
    }

    void expect_eof() const {
        if (pos_ != buf_.size()) {
            throw std::runtime_error(path_ + ": trailing bytes after payload");
        }
    }

private:
    std::uint16_t u16() {
        std::uint16_t v = static_cast<unsigned char>(buf_[pos_]);
        v |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf_[pos_ + 1])) << 8;
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(
                     static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::string path_;
    std::string buf_;
    std::size_t pos_ = 0;
    json header_;
};

/// Atomic publication: write everything to a sibling temp file, then rename.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(tmp + ": cannot open for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error(tmp + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

inline std::string container_bytes(const char magic[4], const json& header,
                                   const std::vector<const DenseTensor*>& payload) {
    std::string out(magic, 4);
    put_u16(out, kFormatVersion);
    const std::string h = header.dump();
    put_u32(out, static_cast<std::uint32_t>(h.size()));
    Index total = 0;
    for (const DenseTensor* t : payload) total += t->size();
    out.reserve(out.size() + h.size() + static_cast<std::size_t>(total) * 8);
    out += h;
    for (const DenseTensor* t : payload) {
        put_f64_block(out, t->data(), t->size());
    }
    return out;
}

inline json norm_to_json(const NormalizationParams& p) {
    json j;
    j["method"] = to_string(p.method);
    if (p.field_axis) j["field_axis"] = *p.field_axis;
    j["scale"] = p.scale;
    j["offset"] = p.offset;
    std::vector<int> fl;
    for (bool b : p.floored) fl.push_back(b ? 1 : 0);
    j["floored"] = fl;
    return j;
}

inline NormalizationParams norm_from_json(const json& j) {
    NormalizationParams p;
    p.method = normalization_from_string(j.at("method").get<std::string>());
    if (j.contains("field_axis")) p.field_axis = j.at("field_axis").get<Index>();
    p.scale = j.at("scale").get<std::vector<double>>();
    p.offset = j.at("offset").get<std::vector<double>>();
    for (int b : j.at("floored").get<std::vector<int>>()) p.floored.push_back(b != 0);
    return p;
}

}  // namespace detail

/// Write a batch container: canonical-order f64 payload plus a structured
/// header echoing the shape (batch extent last).
inline void write_batch(const DenseTensor& t, const std::string& path,
                        const std::optional<NormalizationParams>& norm = std::nullopt) {
    json header;
    header["dtype"] = "f64";
    header["layout"] = "first-fastest";
    header["shape"] = t.shape();
    if (norm) header["normalization"] = detail::norm_to_json(*norm);
    detail::write_file_atomic(path,
                              detail::container_bytes(kBatchMagic, header, {&t}));
}

struct BatchFileContents {
    DenseTensor tensor;
    std::optional<NormalizationParams> normalization;
};

inline BatchFileContents read_batch_file(const std::string& path) {
    detail::Reader r(path, kBatchMagic);
    const json& h = r.header();
    if (h.at("dtype").get<std::string>() != "f64" ||
        h.at("layout").get<std::string>() != "first-fastest") {
        throw std::runtime_error(path + ": unsupported dtype or layout");
    }
    Shape shape = h.at("shape").get<Shape>();
    BatchFileContents out{DenseTensor(shape, r.read_payload(shape_product(shape))),
                          std::nullopt};
    r.expect_eof();
    if (h.contains("normalization")) {
        out.normalization = detail::norm_from_json(h.at("normalization"));
    }
    return out;
}

inline DenseTensor read_batch(const std::string& path) {
    return read_batch_file(path).tensor;
}

/// Persist a representation with its ledger. Cores are written layer-major,
/// position-minor; writing the same state twice yields identical bytes.
/// Cores are checked against the representation invariants before anything
/// touches the disk, so a corrupt state can never be published.
inline void write_state(const RepresentationState& state, const std::string& path) {
    const HTRepresentation& rep = state.rep;
    rep.validate();
    json header;
    header["dims"] = rep.dims;
    header["epsilon_rel"] = rep.epsilon_rel;
    header["accumulated"] = rep.accumulated;
    header["batches_processed"] = state.batches_processed;

    json nodes = json::array();
    json shapes = json::array();
    std::vector<const DenseTensor*> payload;
    for (Index l = 0; l <= rep.tree.depth(); ++l) {
        for (const TreeNode& n : rep.tree.layer(l)) {
            json jn;
            jn["layer"] = n.id.layer;
            jn["pos"] = n.id.pos;
            switch (n.kind) {
                case NodeKind::Root: jn["kind"] = "root"; break;
                case NodeKind::Transfer: jn["kind"] = "transfer"; break;
                case NodeKind::Leaf: jn["kind"] = "leaf"; break;
            }
            if (n.kind == NodeKind::Leaf) {
                jn["leaf_dim"] = n.leaf_dim;
            } else {
                jn["successors"] = {{n.successors[0].layer, n.successors[0].pos},
                                    {n.successors[1].layer, n.successors[1].pos}};
            }
            if (n.kind != NodeKind::Root) {
                jn["parent"] = {n.parent.layer, n.parent.pos};
            }
            nodes.push_back(std::move(jn));
            shapes.push_back(rep.core(n.id).shape());
            payload.push_back(&rep.core(n.id));
        }
    }
    header["tree"] = {{"d", rep.tree.dims()}, {"nodes", std::move(nodes)}};
    header["core_shapes"] = std::move(shapes);

    json units = json::array();
    for (const UnitRecord& u : state.units) {
        units.push_back({{"first", u.first},
                         {"count", u.count},
                         {"source", u.source},
                         {"norm", detail::norm_to_json(u.norm)}});
    }
    header["units"] = std::move(units);

    detail::write_file_atomic(
        path, detail::container_bytes(kStateMagic, header, payload));
}

inline RepresentationState read_state(const std::string& path) {
    detail::Reader r(path, kStateMagic);
    const json& h = r.header();

    const json& jtree = h.at("tree");
    const Index d = jtree.at("d").get<Index>();
    std::vector<std::vector<TreeNode>> layers;
    for (const json& jn : jtree.at("nodes")) {
        TreeNode n;
        n.id = {jn.at("layer").get<Index>(), jn.at("pos").get<Index>()};
        const std::string kind = jn.at("kind").get<std::string>();
        if (kind == "root") n.kind = NodeKind::Root;
        else if (kind == "transfer") n.kind = NodeKind::Transfer;
        else if (kind == "leaf") n.kind = NodeKind::Leaf;
        else throw std::runtime_error(path + ": unknown node kind " + kind);
        if (n.kind == NodeKind::Leaf) {
            n.leaf_dim = jn.at("leaf_dim").get<Index>();
        } else {
            for (const json& js : jn.at("successors")) {
                n.successors.push_back({js.at(0).get<Index>(), js.at(1).get<Index>()});
            }
        }
        if (static_cast<std::size_t>(n.id.layer) >= layers.size()) {
            layers.resize(static_cast<std::size_t>(n.id.layer) + 1);
        }
        auto& layer = layers[static_cast<std::size_t>(n.id.layer)];
        if (static_cast<Index>(layer.size()) != n.id.pos) {
            throw std::runtime_error(path + ": node records out of order");
        }
        layer.push_back(std::move(n));
    }

    RepresentationState state;
    try {
        state.rep.tree = DimensionTree::from_layers(std::move(layers));
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(path + ": corrupt tree: " + e.what());
    }
    if (state.rep.tree.dims() != d) {
        throw std::runtime_error(path + ": tree dimension mismatch");
    }
    // stored parent links must agree with the reconstructed ones
    for (const json& jn : jtree.at("nodes")) {
        NodeId id{jn.at("layer").get<Index>(), jn.at("pos").get<Index>()};
        if (id.layer > 0) {
            NodeId parent{jn.at("parent").at(0).get<Index>(),
                          jn.at("parent").at(1).get<Index>()};
            if (state.rep.tree.node(id).parent != parent) {
                throw std::runtime_error(path + ": corrupt parent link at node " +
                                         to_string(id));
            }
        }
    }

    state.rep.dims = h.at("dims").get<Shape>();
    state.rep.epsilon_rel = h.at("epsilon_rel").get<double>();
    state.rep.accumulated = h.at("accumulated").get<Index>();
    state.batches_processed = h.at("batches_processed").get<Index>();

    const json& jshapes = h.at("core_shapes");
    state.rep.cores.resize(static_cast<std::size_t>(state.rep.tree.depth()) + 1);
    std::size_t k = 0;
    for (Index l = 0; l <= state.rep.tree.depth(); ++l) {
        auto& layer_cores = state.rep.cores[static_cast<std::size_t>(l)];
        for (Index i = 0; i < state.rep.tree.layer_size(l); ++i, ++k) {
            Shape shape = jshapes.at(k).get<Shape>();
            layer_cores.emplace_back(shape, r.read_payload(shape_product(shape)));
        }
    }
    r.expect_eof();

    for (const json& ju : h.at("units")) {
        UnitRecord u;
        u.first = ju.at("first").get<Index>();
        u.count = ju.at("count").get<Index>();
        u.source = ju.at("source").get<std::string>();
        u.norm = detail::norm_from_json(ju.at("norm"));
        state.units.push_back(std::move(u));
    }

    try {
        state.rep.validate();
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": corrupt representation: " + e.what());
    }
    return state;
}

/// Round-trip persistence of a bare representation (no ledger).
inline void write_representation(const HTRepresentation& h, const std::string& path) {
    write_state(RepresentationState{h, {}, 0}, path);
}

inline HTRepresentation read_representation(const std::string& path) {
    return read_state(path).rep;
}

}  // namespace htrise::io
