#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "voxseg/volume.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    auto dir = fs::temp_directory_path() / "voxseg_tests";
    fs::create_directories(dir);
    return dir / name;
}

template <class T>
Volume random_volume(Vec3 shape, int channels, std::uint64_t seed, Vec3 origin = {}) {
    rng::Stream s(seed);
    const VoxelGeometry g(shape, origin);
    std::vector<T> v(std::size_t(channels) * std::size_t(g.voxel_count()));
    for (auto& x : v) {
        if constexpr (std::is_same_v<T, float>) x = float(s.uniform(-10, 10));
        else x = T(s.next());
    }
    return Volume(g, channels, std::move(v));
}

}  // namespace

TEST_CASE("zero float volume round-trips") {
    const auto v = Volume::zeros(VoxelGeometry({2, 2, 2}), 1, DType::float32);
    write_volume(v, temp_file("zeros.vxv"));
    CHECK(read_volume(temp_file("zeros.vxv")) == v);
}

TEST_CASE("seeded uint8 volume round-trips bit for bit") {
    const auto v = random_volume<std::uint8_t>({4, 5, 6}, 3, 11, {-2, 7, 1});
    write_volume(v, temp_file("u8.vxv"));
    const auto r = read_volume(temp_file("u8.vxv"));
    CHECK(r.geometry() == v.geometry());
    CHECK(r.channels() == 3);
    CHECK(r.dtype() == DType::uint8);
    const auto a = v.values<std::uint8_t>(), b = r.values<std::uint8_t>();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
}

TEST_CASE("every dtype and channel count round-trips through bytes") {
    std::uint64_t seed = 1;
    for (int c : {1, 2, 5}) {
        for (const auto& v : {random_volume<float>({3, 2, 4}, c, seed++), random_volume<std::uint8_t>({3, 2, 4}, c, seed++),
                              random_volume<std::uint32_t>({3, 2, 4}, c, seed++),
                              random_volume<std::uint64_t>({3, 2, 4}, c, seed++, {5, -5, 0})}) {
            const auto bytes = encode_volume(v);
            CHECK(bytes.size() == 30 + v.raw_size());
            CHECK(decode_volume(bytes) == v);
            CHECK(encode_volume(decode_volume(bytes)) == bytes);
        }
    }
}

TEST_CASE("header layout is little-endian") {
    const Volume v(VoxelGeometry({2, 1, 1}, {-1, 0, 3}), 1, std::vector<std::uint32_t>{1, 0x01020304});
    const auto b = encode_volume(v);
    REQUIRE(b.size() == 38);
    CHECK(std::string(b.begin(), b.begin() + 4) == "VXV1");
    CHECK(b[4] == 3);
    CHECK(b[5] == 1);
    CHECK(b[6] == 2);
    CHECK(b[18] == 0xff);  // origin x = -1
    CHECK(b[26] == 3);
    CHECK(b[34] == 0x04);
    CHECK(b[37] == 0x01);
}

TEST_CASE("malformed files raise distinct errors") {
    auto bytes = encode_volume(random_volume<float>({2, 2, 2}, 1, 3));
    auto kind_of = [](std::vector<std::uint8_t> b) {
        try {
            decode_volume(b);
        } catch (const VolumeFormatError& e) {
            return int(e.kind());
        }
        return -1;
    };
    auto bad = bytes;
    bad[0] = 'X';
    CHECK(kind_of(bad) == int(VolumeFormatError::Kind::bad_magic));
    bad = bytes;
    bad.pop_back();
    CHECK(kind_of(bad) == int(VolumeFormatError::Kind::size_mismatch));
    bad = bytes;
    bad[4] = 9;
    CHECK(kind_of(bad) == int(VolumeFormatError::Kind::unsupported_dtype));
    bad = bytes;
    bad[6] = 0, bad[7] = 0, bad[8] = 0, bad[9] = 0;
    CHECK(kind_of(bad) == int(VolumeFormatError::Kind::bad_header));

    std::ofstream(temp_file("magic.vxv"), std::ios::binary) << "NOPE and more bytes than a header needs....";
    CHECK_THROWS_AS(read_volume(temp_file("magic.vxv")), VolumeFormatError);
}

TEST_CASE("crop") {
    const auto v = random_volume<float>({4, 4, 4}, 2, 5, {10, 20, 30});
    SUBCASE("full extent is the identity") { CHECK(crop(v, v.geometry().extent()) == v); }
    SUBCASE("single voxel at the origin") {
        std::vector<std::uint32_t> d(64, 0);
        d[0] = 7;
        const auto l = make_labels(VoxelGeometry({4, 4, 4}), d);
        const auto c = crop(l, {{0, 0, 0}, {1, 1, 1}});
        CHECK(c.values<std::uint32_t>().size() == 1);
        CHECK(c.values<std::uint32_t>()[0] == 7);
    }
    SUBCASE("interior box matches a nested-loop copy") {
        const Box box{{11, 21, 31}, {13, 23, 33}};
        const auto c = crop(v, box);
        CHECK(c.geometry().origin() == box.lo);
        CHECK(c.geometry().shape() == Vec3{2, 2, 2});
        const auto src = v.values<float>();
        std::vector<float> oracle;
        for (int ch = 0; ch < 2; ++ch)
            for (int z = 1; z < 3; ++z)
                for (int y = 1; y < 3; ++y)
                    for (int x = 1; x < 3; ++x) oracle.push_back(src[std::size_t(ch * 64 + z * 16 + y * 4 + x)]);
        const auto got = c.values<float>();
        CHECK(std::equal(oracle.begin(), oracle.end(), got.begin(), got.end()));
    }
    SUBCASE("outside the extent throws") { CHECK_THROWS(crop(v, {{9, 20, 30}, {12, 22, 32}})); }
    SUBCASE("crop of a crop") {
        rng::Stream s(17);
        for (int trial = 0; trial < 50; ++trial) {
            Box a, b;
            for (int k = 0; k < 3; ++k) {
                const int lo = int(s.below(3)), hi = lo + 1 + int(s.below(std::uint64_t(4 - lo)));
                a.lo[k] = v.geometry().origin()[k] + lo;
                a.hi[k] = v.geometry().origin()[k] + hi;
                const int blo = a.lo[k] + int(s.below(std::uint64_t(hi - lo)));
                b.lo[k] = blo;
                b.hi[k] = blo + 1 + int(s.below(std::uint64_t(a.hi[k] - blo)));
            }
            CHECK(crop(crop(v, a), b) == crop(v, b));
        }
    }
}

TEST_CASE("linearization is a bijection") {
    const VoxelGeometry g({5, 3, 7}, {1, 2, 3});
    for (std::int64_t i = 0; i < g.voxel_count(); ++i) {
        const Vec3 p = g.delinearize(i);
        CHECK(g.in_bounds(p));
        CHECK(g.linear_index(p) == i);
    }
}

TEST_CASE("centered_box stays inside its bounds") {
    const Box bounds{{0, 0, 0}, {64, 64, 16}};
    CHECK(centered_box({32, 32, 8}, {32, 32, 16}, bounds) == Box{{16, 16, 0}, {48, 48, 16}});
    CHECK(centered_box({2, 60, 1}, {32, 32, 5}, bounds) == Box{{0, 32, 0}, {32, 64, 5}});
    CHECK(centered_box({5, 5, 5}, {100, 8, 32}, bounds) == Box{{0, 1, 0}, {64, 9, 16}});
}

TEST_CASE("label_values rejects float volumes") {
    CHECK_THROWS(label_values(Volume::zeros(VoxelGeometry({1, 1, 1}), 1, DType::float32)));
    CHECK_THROWS(Volume(VoxelGeometry({2, 2, 2}), 1, std::vector<float>(7)));
}
