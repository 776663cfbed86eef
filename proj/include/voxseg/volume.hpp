#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace voxseg {

/// Integer voxel coordinate or offset, (x, y, z) order.
struct Vec3 {
    int x = 0;
    int y = 0;
    int z = 0;

    constexpr int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    constexpr int& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
    friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend constexpr Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
};

std::ostream& operator<<(std::ostream& os, const Vec3& v);

/// Half-open box [lo, hi) in global voxel coordinates.
struct Box {
    Vec3 lo;
    Vec3 hi;

    constexpr Vec3 shape() const { return hi - lo; }
    constexpr bool empty() const { return hi.x <= lo.x || hi.y <= lo.y || hi.z <= lo.z; }
    std::int64_t voxel_count() const;
    bool contains(Vec3 p) const;
    bool contains(const Box& other) const;

    friend constexpr bool operator==(const Box&, const Box&) = default;
};

std::ostream& operator<<(std::ostream& os, const Box& b);

Box intersect(const Box& a, const Box& b);
Box translate(const Box& b, Vec3 offset);
/// Box of `shape` centered on `center`, shifted to lie inside `bounds` (cut to `bounds` when larger).
Box centered_box(Vec3 center, Vec3 shape, const Box& bounds);

/// Shape and global placement of a dense voxel grid. Index layout is x fastest, then y, then z.
class VoxelGeometry {
public:
    VoxelGeometry() = default;
    explicit VoxelGeometry(Vec3 shape, Vec3 origin = {});

    Vec3 shape() const { return shape_; }
    Vec3 origin() const { return origin_; }
    std::int64_t voxel_count() const {
        return std::int64_t(shape_.x) * shape_.y * shape_.z;
    }
    Box extent() const { return {origin_, origin_ + shape_}; }

    bool in_bounds(Vec3 local) const {
        return local.x >= 0 && local.y >= 0 && local.z >= 0 && local.x < shape_.x &&
               local.y < shape_.y && local.z < shape_.z;
    }
    bool contains_global(Vec3 global) const { return in_bounds(global - origin_); }

    std::int64_t linear_index(Vec3 local) const {
        return (std::int64_t(local.z) * shape_.y + local.y) * shape_.x + local.x;
    }
    Vec3 delinearize(std::int64_t index) const {
        const std::int64_t plane = std::int64_t(shape_.x) * shape_.y;
        const int z = int(index / plane);
        const std::int64_t rem = index - z * plane;
        return {int(rem % shape_.x), int(rem / shape_.x), z};
    }

    friend bool operator==(const VoxelGeometry&, const VoxelGeometry&) = default;

private:
    Vec3 shape_{1, 1, 1};
    Vec3 origin_{};
};

enum class DType : std::uint8_t { float32 = 1, uint8 = 2, uint32 = 3, uint64 = 4 };

std::string to_string(DType d);
std::size_t dtype_size(DType d);

template <class T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) return DType::float32;
    else if constexpr (std::is_same_v<T, std::uint8_t>) return DType::uint8;
    else if constexpr (std::is_same_v<T, std::uint32_t>) return DType::uint32;
    else {
        static_assert(std::is_same_v<T, std::uint64_t>, "unsupported voxel type");
        return DType::uint64;
    }
}

/// Dense multi-channel voxel container. Immutable once built: new data means a new Volume.
///
/// Storage is channel-major, then z, y, x with x varying fastest, so channel `c` of voxel `i`
/// lives at `c * voxel_count + i`.
class Volume {
public:
    Volume() = default;

    template <class T>
    Volume(const VoxelGeometry& geometry, int channels, std::vector<T> data)
        : geometry_(geometry), channels_(channels), data_(std::move(data)) {
        validate();
    }

    static Volume zeros(const VoxelGeometry& geometry, int channels, DType dtype);

    const VoxelGeometry& geometry() const { return geometry_; }
    int channels() const { return channels_; }
    DType dtype() const { return DType(data_.index() + 1); }
    std::size_t element_count() const;

    template <class T>
    std::span<const T> values() const {
        const auto* v = std::get_if<std::vector<T>>(&data_);
        if (!v) throw std::invalid_argument("volume holds " + to_string(dtype()) + ", not " +
                                            to_string(dtype_of<T>()));
        return {v->data(), v->size()};
    }

    template <class T>
    std::span<const T> channel(int c) const {
        const auto n = std::size_t(geometry_.voxel_count());
        return values<T>().subspan(std::size_t(c) * n, n);
    }

    template <class T>
    T at(int c, Vec3 local) const {
        return values<T>()[std::size_t(c) * std::size_t(geometry_.voxel_count()) +
                           std::size_t(geometry_.linear_index(local))];
    }

    /// Moves the payload out; the volume is left holding an empty payload.
    template <class T>
    std::vector<T> release() && {
        auto* v = std::get_if<std::vector<T>>(&data_);
        if (!v) throw std::invalid_argument("volume dtype mismatch on release");
        return std::move(*v);
    }

    /// Same geometry, channels and dtype, payload equal byte for byte (NaN payloads included).
    friend bool operator==(const Volume& a, const Volume& b);

    const void* raw_data() const;
    std::size_t raw_size() const { return element_count() * dtype_size(dtype()); }

private:
    void validate() const;

    using Storage = std::variant<std::vector<float>, std::vector<std::uint8_t>,
                                 std::vector<std::uint32_t>, std::vector<std::uint64_t>>;

    VoxelGeometry geometry_{};
    int channels_ = 1;
    Storage data_{std::vector<float>(1, 0.0f)};
};

/// Raised by read_volume for malformed VXV1 files.
class VolumeFormatError : public std::runtime_error {
public:
    enum class Kind { bad_magic, bad_header, size_mismatch, unsupported_dtype };

    VolumeFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& v, const std::filesystem::path& path);

/// Serialized VXV1 bytes; write_volume writes exactly these.
std::vector<std::uint8_t> encode_volume(const Volume& v);
Volume decode_volume(std::span<const std::uint8_t> bytes);

/// Copies the global box `box` out of `v`; the result's origin is `box.lo`.
Volume crop(const Volume& v, const Box& box);

/// Label values widened to 64 bits. Throws for float volumes or multi-channel volumes.
std::vector<std::uint64_t> label_values(const Volume& labels);

/// Builds a single-channel uint32 label volume.
Volume make_labels(const VoxelGeometry& geometry, std::vector<std::uint32_t> labels);

}  // namespace voxseg
