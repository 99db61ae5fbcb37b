#include <catch2/catch_amalgamated.hpp>

#include <htrise/ht_rise.hpp>
#include <htrise/io.hpp>

#include "oracles.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace htrise;
namespace fs = std::filesystem;

namespace {

std::mt19937_64 rng(61803);

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("htrise_io_" + std::to_string(rng()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("batch containers round-trip bit-exactly") {
    TempDir dir;
    DenseTensor t = oracle::random_tensor({3, 4, 2, 5}, rng);
    const std::string path = dir.file("batch.bht");
    io::write_batch(t, path);
    DenseTensor back = io::read_batch(path);
    REQUIRE(back.shape() == t.shape());
    REQUIRE(back.values() == t.values());

    // deterministic bytes
    io::write_batch(t, dir.file("again.bht"));
    REQUIRE(file_bytes(path) == file_bytes(dir.file("again.bht")));
}

TEST_CASE("batch containers carry optional normalization metadata") {
    TempDir dir;
    DenseTensor t = oracle::random_tensor({4, 3, 2}, rng);
    auto [scaled, params] = normalize(t, NormalizationMethod::ZScore, 1);
    io::write_batch(scaled, dir.file("n.bht"), params);
    io::BatchFileContents c = io::read_batch_file(dir.file("n.bht"));
    REQUIRE(c.normalization.has_value());
    REQUIRE(*c.normalization == params);
    DenseTensor restored = denormalize(c.tensor, *c.normalization);
    REQUIRE((restored.values() - t.values()).norm() <= 1e-12 * t.values().norm());
}

TEST_CASE("batch containers reject malformed files") {
    TempDir dir;
    DenseTensor t = oracle::random_tensor({2, 3, 2}, rng);
    const std::string path = dir.file("batch.bht");
    io::write_batch(t, path);

    std::string bytes = file_bytes(path);

    // one byte short
    write_bytes(dir.file("short.bht"), bytes.substr(0, bytes.size() - 1));
    REQUIRE_THROWS_WITH(io::read_batch(dir.file("short.bht")),
                        Catch::Matchers::ContainsSubstring("truncated"));

    // trailing garbage
    write_bytes(dir.file("long.bht"), bytes + "x");
    REQUIRE_THROWS_WITH(io::read_batch(dir.file("long.bht")),
                        Catch::Matchers::ContainsSubstring("trailing"));

    // wrong magic
    std::string bad = bytes;
    bad[0] = 'X';
    write_bytes(dir.file("magic.bht"), bad);
    REQUIRE_THROWS_WITH(io::read_batch(dir.file("magic.bht")),
                        Catch::Matchers::ContainsSubstring("magic"));

    // future version
    std::string future = bytes;
    future[4] = 99;
    write_bytes(dir.file("future.bht"), future);
    REQUIRE_THROWS_WITH(io::read_batch(dir.file("future.bht")),
                        Catch::Matchers::ContainsSubstring("version"));

    REQUIRE_THROWS_AS(io::read_batch(dir.file("missing.bht")), std::runtime_error);
}

TEST_CASE("representation states round-trip bit-exactly") {
    TempDir dir;
    DenseTensor y = oracle::random_tensor({3, 4, 3, 3}, rng);
    auto [rep, report] = bht_l2r(y, DimensionTree::balanced(3), 0.2);

    io::RepresentationState state;
    state.rep = rep;
    state.batches_processed = 1;
    auto [scaled, params] = normalize(y, NormalizationMethod::MaxAbs);
    state.units.push_back({1, 3, "y0.bht", params});

    const std::string path = dir.file("state.htrs");
    io::write_state(state, path);
    io::RepresentationState back = io::read_state(path);

    REQUIRE(back.rep.tree == rep.tree);
    REQUIRE(back.rep.dims == rep.dims);
    REQUIRE(back.rep.accumulated == rep.accumulated);
    REQUIRE(back.rep.epsilon_rel == rep.epsilon_rel);
    REQUIRE(back.batches_processed == 1);
    REQUIRE(back.units.size() == 1);
    REQUIRE(back.units[0] == state.units[0]);
    for (Index l = 0; l <= rep.tree.depth(); ++l) {
        for (const TreeNode& n : rep.tree.layer(l)) {
            REQUIRE(back.rep.core(n.id) == rep.core(n.id));
        }
    }

    // writing the identical state twice gives identical bytes
    io::write_state(back, dir.file("state2.htrs"));
    REQUIRE(file_bytes(path) == file_bytes(dir.file("state2.htrs")));
}

TEST_CASE("fresh rank-one representations round-trip") {
    TempDir dir;
    std::vector<Matrix> bases;
    for (Index k = 0; k < 4; ++k) bases.push_back(oracle::random_orthonormal(4, 1, rng));
    DenseTensor y = oracle::tucker_family_batch(bases, 2, rng);
    auto [rep, report] = bht_l2r(y, DimensionTree::balanced(4), 1e-6);

    io::write_representation(rep, dir.file("r1.htrs"));
    HTRepresentation back = io::read_representation(dir.file("r1.htrs"));
    for (Index l = 0; l <= rep.tree.depth(); ++l) {
        for (const TreeNode& n : rep.tree.layer(l)) {
            REQUIRE(back.core(n.id) == rep.core(n.id));
        }
    }
}

TEST_CASE("updating a reloaded state matches the in-memory path exactly") {
    TempDir dir;
    Shape s = {3, 3, 4, 2};
    auto [rep, report] = bht_l2r(oracle::random_tensor(s, rng),
                                 DimensionTree::balanced(3), 0.25);

    std::vector<DenseTensor> batches;
    for (int k = 0; k < 3; ++k) batches.push_back(oracle::random_tensor(s, rng));

    HTRepresentation mem = rep;
    for (const DenseTensor& b : batches) {
        mem = ht_rise_update(mem, b).first;
    }

    HTRepresentation disk = rep;
    for (const DenseTensor& b : batches) {
        const std::string path = dir.file("round.htrs");
        io::write_representation(disk, path);
        disk = io::read_representation(path);
        disk = ht_rise_update(disk, b).first;
    }

    for (Index l = 0; l <= mem.tree.depth(); ++l) {
        for (const TreeNode& n : mem.tree.layer(l)) {
            REQUIRE(disk.core(n.id) == mem.core(n.id));
        }
    }
}

TEST_CASE("corrupt payloads fail the invariant checks on read") {
    TempDir dir;
    DenseTensor y = oracle::random_tensor({3, 3, 3, 2}, rng);
    auto [rep, report] = bht_l2r(y, DimensionTree::balanced(3), 0.2);
    const std::string path = dir.file("state.htrs");
    io::write_representation(rep, path);

    std::string bytes = file_bytes(path);
    // flip a payload byte well past the header
    bytes[bytes.size() - 9] = static_cast<char>(bytes[bytes.size() - 9] ^ 0x41);
    write_bytes(dir.file("corrupt.htrs"), bytes);
    REQUIRE_THROWS_AS(io::read_state(dir.file("corrupt.htrs")), std::runtime_error);

    write_bytes(dir.file("trunc.htrs"), bytes.substr(0, bytes.size() - 3));
    REQUIRE_THROWS_WITH(io::read_state(dir.file("trunc.htrs")),
                        Catch::Matchers::ContainsSubstring("truncated"));
}
