#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pae/io.hpp"
#include "pae/rng.hpp"
#include "pae/tensor.hpp"

using namespace pae;
namespace fs = std::filesystem;

namespace {
fs::path tmp_dir() {
    auto d = fs::temp_directory_path() / "pae_test_tensor";
    fs::create_directories(d);
    return d;
}
}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    t.at(1, 2) = 5.0;
    CHECK(t[5] == 5.0);
    auto r = t.reshaped({3, 2});
    CHECK(r.dim(0) == 3);
    CHECK_THROWS_AS(t.reshaped({4}), ConfigError);
    CHECK(t.all_finite());
    t[0] = std::nan("");
    CHECK(!t.all_finite());
}

TEST_CASE("pairwise sum matches naive on random data") {
    Rng rng(7);
    std::vector<double> xs(1003);
    long double naive = 0.0;
    for (auto& x : xs) {
        x = rng.uniform(-1, 1);
        naive += x;
    }
    CHECK(pairwise_sum(xs) == doctest::Approx(static_cast<double>(naive)).epsilon(1e-12));
}

TEST_CASE("container round trip is bit identical") {
    auto dir = tmp_dir();
    Rng rng(3);
    Tensor t({3, 4, 5});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();

    SUBCASE("f64 exact") {
        write_tensor(dir / "a.paet", t, DType::f64);
        Tensor u = read_tensor(dir / "a.paet");
        REQUIRE(u.same_shape(t));
        for (int64_t i = 0; i < t.numel(); ++i) CHECK(u[i] == t[i]);
    }
    SUBCASE("f32 stable under rewrite") {
        write_tensor(dir / "b.paet", t, DType::f32);
        Tensor u = read_tensor(dir / "b.paet");
        write_tensor(dir / "c.paet", u, DType::f32);
        CHECK(file_content_hash(dir / "b.paet") == file_content_hash(dir / "c.paet"));
    }
}

TEST_CASE("scalar 1.0f payload bytes are 00 00 80 3F after header") {
    auto dir = tmp_dir();
    write_tensor(dir / "one.paet", Tensor::scalar(1.0), DType::f32);
    std::ifstream f(dir / "one.paet", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    // header: magic(4) + version(2) + dtype(1) + rank(1) + dims(4) = 12 bytes
    REQUIRE(bytes.size() == 16);
    CHECK(bytes[0] == 'P');
    CHECK(bytes[1] == 'A');
    CHECK(bytes[2] == 'E');
    CHECK(bytes[3] == 'T');
    CHECK(bytes[6] == 0);  // dtype f32
    CHECK(bytes[7] == 1);  // rank
    CHECK(bytes[12] == 0x00);
    CHECK(bytes[13] == 0x00);
    CHECK(bytes[14] == 0x80);
    CHECK(bytes[15] == 0x3F);
}

TEST_CASE("bad magic and truncation are format errors") {
    auto dir = tmp_dir();
    {
        std::ofstream f(dir / "bad.paet", std::ios::binary);
        f << "PAEXrest-of-file";
    }
    CHECK_THROWS_AS(read_tensor(dir / "bad.paet"), FormatError);

    write_tensor(dir / "t.paet", Tensor::full({4}, 2.0), DType::f32);
    auto all = [&] {
        std::ifstream f(dir / "t.paet", std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }();
    {
        std::ofstream f(dir / "trunc.paet", std::ios::binary);
        f << all.substr(0, all.size() - 3);
    }
    try {
        read_tensor(dir / "trunc.paet");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        // message names expected and actual byte counts
        CHECK(std::string(e.what()).find("expected 16") != std::string::npos);
        CHECK(std::string(e.what()).find("got 13") != std::string::npos);
    }
}

TEST_CASE("rng substreams are independent and deterministic") {
    auto a1 = Rng::substream(42, "data");
    auto a2 = Rng::substream(42, "data");
    auto b = Rng::substream(42, "init");
    CHECK(a1.next_u64() == a2.next_u64());
    auto c1 = Rng::substream(42, "data");
    auto c2 = Rng::substream(43, "data");
    CHECK(c1.next_u64() != c2.next_u64());
    (void)b;
}

TEST_CASE("rng normal moments are sane") {
    Rng rng(11);
    double s = 0, s2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::abs(s / n) < 0.03);
    CHECK(std::abs(s2 / n - 1.0) < 0.05);
}
