#include "voxseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

namespace voxseg {

namespace {

constexpr char kMagic[4] = {'V', 'X', 'V', '1'};
constexpr std::size_t kHeaderSize = 4 + 1 + 1 + 3 * 4 + 3 * 4;

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(std::uint8_t((u >> (8 * b)) & 0xffu));
}

template <class T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t pos) {
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) u |= U(U(bytes[pos + b]) << (8 * b));
    return static_cast<T>(u);
}

template <class T>
void append_payload(std::vector<std::uint8_t>& out, std::span<const T> values) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(values.data());
    const std::size_t n = values.size_bytes();
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        out.insert(out.end(), raw, raw + n);
    } else {
        for (std::size_t i = 0; i < values.size(); ++i)
            for (std::size_t b = sizeof(T); b-- > 0;) out.push_back(raw[i * sizeof(T) + b]);
    }
}

template <class T>
std::vector<T> read_payload(std::span<const std::uint8_t> bytes, std::size_t count) {
    std::vector<T> out(count);
    auto* raw = reinterpret_cast<std::uint8_t*>(out.data());
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        std::memcpy(raw, bytes.data(), count * sizeof(T));
    } else {
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t b = 0; b < sizeof(T); ++b)
                raw[i * sizeof(T) + b] = bytes[i * sizeof(T) + sizeof(T) - 1 - b];
    }
    return out;
}

template <class Fn>
decltype(auto) visit_dtype(DType d, Fn&& fn) {
    switch (d) {
        case DType::float32: return fn(float{});
        case DType::uint8: return fn(std::uint8_t{});
        case DType::uint32: return fn(std::uint32_t{});
        case DType::uint64: return fn(std::uint64_t{});
    }
    throw std::invalid_argument("unknown dtype");
}

}  // namespace

std::ostream& operator<<(std::ostream& os, const Vec3& v) {
    return os << '(' << v.x << ',' << v.y << ',' << v.z << ')';
}

std::ostream& operator<<(std::ostream& os, const Box& b) { return os << '[' << b.lo << ',' << b.hi << ')'; }

std::int64_t Box::voxel_count() const {
    if (empty()) return 0;
    const Vec3 s = shape();
    return std::int64_t(s.x) * s.y * s.z;
}

bool Box::contains(Vec3 p) const {
    return p.x >= lo.x && p.y >= lo.y && p.z >= lo.z && p.x < hi.x && p.y < hi.y && p.z < hi.z;
}

bool Box::contains(const Box& o) const {
    if (o.empty()) return true;
    return o.lo.x >= lo.x && o.lo.y >= lo.y && o.lo.z >= lo.z && o.hi.x <= hi.x &&
           o.hi.y <= hi.y && o.hi.z <= hi.z;
}

Box intersect(const Box& a, const Box& b) {
    Box r;
    for (int k = 0; k < 3; ++k) {
        r.lo[k] = std::max(a.lo[k], b.lo[k]);
        r.hi[k] = std::max(r.lo[k], std::min(a.hi[k], b.hi[k]));
    }
    return r;
}

Box translate(const Box& b, Vec3 offset) { return {b.lo + offset, b.hi + offset}; }

Box centered_box(Vec3 center, Vec3 shape, const Box& bounds) {
    Box out;
    for (int a = 0; a < 3; ++a) {
        const int room = bounds.hi[a] - bounds.lo[a];
        if (shape[a] >= room) {
            out.lo[a] = bounds.lo[a];
            out.hi[a] = bounds.hi[a];
            continue;
        }
        const int lo = std::clamp(center[a] - shape[a] / 2, bounds.lo[a], bounds.hi[a] - shape[a]);
        out.lo[a] = lo;
        out.hi[a] = lo + shape[a];
    }
    return out;
}

VoxelGeometry::VoxelGeometry(Vec3 shape, Vec3 origin) : shape_(shape), origin_(origin) {
    if (shape.x < 1 || shape.y < 1 || shape.z < 1) {
        throw std::invalid_argument("voxel geometry shape must be positive in every axis");
    }
}

std::string to_string(DType d) {
    switch (d) {
        case DType::float32: return "float32";
        case DType::uint8: return "uint8";
        case DType::uint32: return "uint32";
        case DType::uint64: return "uint64";
    }
    return "dtype(" + std::to_string(int(d)) + ")";
}

std::size_t dtype_size(DType d) {
    return visit_dtype(d, [](auto tag) { return sizeof(tag); });
}

Volume Volume::zeros(const VoxelGeometry& geometry, int channels, DType dtype) {
    const auto n = std::size_t(geometry.voxel_count()) * std::size_t(std::max(channels, 0));
    return visit_dtype(dtype, [&](auto tag) {
        using T = decltype(tag);
        return Volume(geometry, channels, std::vector<T>(n, T{}));
    });
}

std::size_t Volume::element_count() const {
    return std::visit([](const auto& v) { return v.size(); }, data_);
}

const void* Volume::raw_data() const {
    return std::visit([](const auto& v) -> const void* { return v.data(); }, data_);
}

void Volume::validate() const {
    if (channels_ < 1 || channels_ > 255)
        throw std::invalid_argument("volume channel count must be in [1, 255]");
    const auto expected = std::size_t(geometry_.voxel_count()) * std::size_t(channels_);
    if (element_count() != expected)
        throw std::invalid_argument("volume payload has " + std::to_string(element_count()) +
                                    " elements, expected " + std::to_string(expected));
}

bool operator==(const Volume& a, const Volume& b) {
    return a.geometry_ == b.geometry_ && a.channels_ == b.channels_ && a.dtype() == b.dtype() &&
           a.raw_size() == b.raw_size() &&
           std::memcmp(a.raw_data(), b.raw_data(), a.raw_size()) == 0;
}

std::vector<std::uint8_t> encode_volume(const Volume& v) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize + v.raw_size());
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    out.push_back(std::uint8_t(v.dtype()));
    out.push_back(std::uint8_t(v.channels()));
    const Vec3 s = v.geometry().shape();
    const Vec3 o = v.geometry().origin();
    for (int k = 0; k < 3; ++k) put_le<std::uint32_t>(out, std::uint32_t(s[k]));
    for (int k = 0; k < 3; ++k) put_le<std::int32_t>(out, o[k]);
    visit_dtype(v.dtype(), [&](auto tag) {
        using T = decltype(tag);
        append_payload<T>(out, v.values<T>());
    });
    return out;
}

Volume decode_volume(std::span<const std::uint8_t> bytes) {
    using Kind = VolumeFormatError::Kind;
    if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
        throw VolumeFormatError(Kind::bad_magic, "bad magic: not a VXV1 volume");
    if (bytes.size() < kHeaderSize)
        throw VolumeFormatError(Kind::size_mismatch, "truncated VXV1 header");

    const std::uint8_t code = bytes[4];
    if (code < 1 || code > 4)
        throw VolumeFormatError(Kind::unsupported_dtype,
                                "unsupported dtype code " + std::to_string(int(code)));
    const auto dtype = DType(code);
    const int channels = bytes[5];
    Vec3 shape, origin;
    for (int k = 0; k < 3; ++k) {
        const auto s = get_le<std::uint32_t>(bytes, 6 + 4 * std::size_t(k));
        if (s == 0 || s > std::uint32_t(INT32_MAX))
            throw VolumeFormatError(Kind::bad_header, "invalid VXV1 shape component");
        shape[k] = int(s);
        origin[k] = get_le<std::int32_t>(bytes, 18 + 4 * std::size_t(k));
    }
    if (channels == 0) throw VolumeFormatError(Kind::bad_header, "VXV1 channel count is zero");

    const VoxelGeometry geometry(shape, origin);
    const auto count = std::size_t(geometry.voxel_count()) * std::size_t(channels);
    const auto payload = bytes.subspan(kHeaderSize);
    if (payload.size() != count * dtype_size(dtype))
        throw VolumeFormatError(Kind::size_mismatch,
                                "VXV1 payload is " + std::to_string(payload.size()) +
                                    " bytes, header implies " +
                                    std::to_string(count * dtype_size(dtype)));
    return visit_dtype(dtype, [&](auto tag) {
        using T = decltype(tag);
        return Volume(geometry, channels, read_payload<T>(payload, count));
    });
}

Volume read_volume(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_volume(bytes);
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
    const auto bytes = encode_volume(v);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

Volume crop(const Volume& v, const Box& box) {
    const auto& g = v.geometry();
    if (box.empty() || !g.extent().contains(box)) {
        std::ostringstream msg;
        msg << "crop box " << box << " outside volume extent " << g.extent();
        throw std::out_of_range(msg.str());
    }
    const VoxelGeometry out_geom(box.shape(), box.lo);
    const Vec3 shape = box.shape();
    const Vec3 base = box.lo - g.origin();
    return visit_dtype(v.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto src = v.values<T>();
        std::vector<T> dst(std::size_t(out_geom.voxel_count()) * std::size_t(v.channels()));
        const auto n_src = std::size_t(g.voxel_count());
        const auto n_dst = std::size_t(out_geom.voxel_count());
        for (int c = 0; c < v.channels(); ++c)
            for (int z = 0; z < shape.z; ++z)
                for (int y = 0; y < shape.y; ++y) {
                    const auto s = c * n_src + std::size_t(g.linear_index(base + Vec3{0, y, z}));
                    const auto d = c * n_dst + std::size_t(out_geom.linear_index({0, y, z}));
                    std::copy_n(src.begin() + std::ptrdiff_t(s), shape.x, dst.begin() + std::ptrdiff_t(d));
                }
        return Volume(out_geom, v.channels(), std::move(dst));
    });
}

std::vector<std::uint64_t> label_values(const Volume& labels) {
    if (labels.channels() != 1) throw std::invalid_argument("label volume must have one channel");
    return visit_dtype(labels.dtype(), [&](auto tag) {
        using T = decltype(tag);
        if constexpr (std::is_floating_point_v<T>) {
            throw std::invalid_argument("label volume must have an unsigned integer dtype");
            return std::vector<std::uint64_t>{};
        } else {
            const auto src = labels.values<T>();
            return std::vector<std::uint64_t>(src.begin(), src.end());
        }
    });
}

Volume make_labels(const VoxelGeometry& geometry, std::vector<std::uint32_t> labels) {
    return Volume(geometry, 1, std::move(labels));
}

}  // namespace voxseg
