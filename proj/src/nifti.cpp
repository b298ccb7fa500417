#include "asap/nifti.hpp"

#include "asap/error.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>

namespace asap {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kSingleFileOffset = 352;

enum DataType : int16_t {
    DT_UINT8 = 2,
    DT_INT16 = 4,
    DT_INT32 = 8,
    DT_FLOAT32 = 16,
    DT_FLOAT64 = 64,
};

// Field offsets in the 348-byte header.
namespace off {
constexpr int sizeof_hdr = 0;
constexpr int dim_info = 39;
constexpr int dim = 40;
constexpr int datatype = 70;
constexpr int bitpix = 72;
constexpr int pixdim = 76;
constexpr int vox_offset = 108;
constexpr int scl_slope = 112;
constexpr int scl_inter = 116;
constexpr int xyzt_units = 123;
constexpr int descrip = 148;
constexpr int qform_code = 252;
constexpr int sform_code = 254;
constexpr int quatern_b = 256;
constexpr int qoffset_x = 268;
constexpr int srow_x = 280;
constexpr int magic = 344;
}  // namespace off

template <typename T>
T byteswap_value(T v) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

class HeaderView {
public:
    HeaderView(const unsigned char* bytes, bool swap) : bytes_(bytes), swap_(swap) {}

    template <typename T>
    T get(int offset) const {
        T v;
        std::memcpy(&v, bytes_ + offset, sizeof(T));
        return swap_ ? byteswap_value(v) : v;
    }

private:
    const unsigned char* bytes_;
    bool swap_;
};

class HeaderWriter {
public:
    HeaderWriter() { bytes_.fill(0); }

    template <typename T>
    void put(int offset, T v) {
        std::memcpy(bytes_.data() + offset, &v, sizeof(T));
    }
    void put_string(int offset, const std::string& s, std::size_t max_len) {
        std::memcpy(bytes_.data() + offset, s.data(), std::min(s.size(), max_len));
    }
    const unsigned char* data() const { return bytes_.data(); }

private:
    std::array<unsigned char, kSingleFileOffset> bytes_;
};

struct GzCloser {
    void operator()(gzFile f) const {
        if (f) gzclose(f);
    }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

GzHandle open_read(const std::filesystem::path& path) {
    GzHandle f(gzopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
    return f;
}

// Reads up to n bytes; returns how many were obtained.
std::size_t read_bytes(gzFile f, void* dst, std::size_t n) {
    auto* out = static_cast<unsigned char*>(dst);
    std::size_t got = 0;
    while (got < n) {
        const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - got, 1u << 30));
        const int r = gzread(f, out + got, chunk);
        if (r <= 0) break;
        got += static_cast<std::size_t>(r);
    }
    return got;
}

int bytes_per_voxel(int16_t datatype) {
    switch (datatype) {
        case DT_UINT8: return 1;
        case DT_INT16: return 2;
        case DT_INT32: return 4;
        case DT_FLOAT32: return 4;
        case DT_FLOAT64: return 8;
        default: throw UnsupportedDatatypeError(datatype);
    }
}

template <typename T>
void convert(const unsigned char* raw, std::size_t n, bool swap, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) {
        T v;
        std::memcpy(&v, raw + i * sizeof(T), sizeof(T));
        if (swap) v = byteswap_value(v);
        out[i] = static_cast<double>(v);
    }
}

Eigen::Matrix4d qform_matrix(const HeaderView& h, const std::array<float, 8>& pixdim) {
    double b = h.get<float>(off::quatern_b);
    double c = h.get<float>(off::quatern_b + 4);
    double d = h.get<float>(off::quatern_b + 8);
    double a2 = 1.0 - (b * b + c * c + d * d);
    double a;
    if (a2 < 1e-7) {
        // Quaternion not quite unit length; renormalise with a = 0.
        const double n = std::sqrt(b * b + c * c + d * d);
        if (n == 0.0) throw FormatError("quatern_b", "zero quaternion");
        b /= n;
        c /= n;
        d /= n;
        a = 0.0;
    } else {
        a = std::sqrt(a2);
    }
    Eigen::Matrix3d R;
    R << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
        2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
        2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
    const double qfac = pixdim[0] < 0 ? -1.0 : 1.0;
    for (int i = 1; i <= 3; ++i)
        if (!(pixdim[i] > 0.0f))
            throw FormatError("pixdim", "pixdim[" + std::to_string(i) + "] must be positive for qform geometry");
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = R * Eigen::Vector3d(pixdim[1], pixdim[2], qfac * pixdim[3]).asDiagonal();
    m(0, 3) = h.get<float>(off::qoffset_x);
    m(1, 3) = h.get<float>(off::qoffset_x + 4);
    m(2, 3) = h.get<float>(off::qoffset_x + 8);
    return m;
}

std::string descrip_units(const HeaderView& h, const unsigned char* bytes) {
    (void)h;
    std::string s(reinterpret_cast<const char*>(bytes + off::descrip), 80);
    s = s.substr(0, s.find('\0'));
    const std::string key = "units=";
    const auto pos = s.find(key);
    if (pos == std::string::npos) return "arbitrary";
    return s.substr(pos + key.size());
}

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::filesystem::path paired_image_path(const std::filesystem::path& hdr) {
    std::string s = hdr.string();
    if (has_suffix(s, ".hdr.gz")) return s.substr(0, s.size() - 7) + ".img.gz";
    if (has_suffix(s, ".hdr")) return s.substr(0, s.size() - 4) + ".img";
    throw FormatError("magic", "'ni1' header without a .hdr extension; cannot locate paired .img");
}

}  // namespace

Volume3D read_nifti(const std::filesystem::path& path) {
    auto file = open_read(path);
    std::array<unsigned char, kHeaderSize> bytes{};
    if (read_bytes(file.get(), bytes.data(), kHeaderSize) != kHeaderSize)
        throw FormatError("sizeof_hdr", "file shorter than the 348-byte header");

    int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    bool swap = false;
    if (sizeof_hdr != kHeaderSize) {
        if (byteswap_value(sizeof_hdr) == kHeaderSize)
            swap = true;
        else
            throw FormatError("sizeof_hdr", "expected 348 in either byte order, found " + std::to_string(sizeof_hdr));
    }
    const HeaderView h(bytes.data(), swap);

    const std::string magic(reinterpret_cast<const char*>(bytes.data() + off::magic), 3);
    const bool single_file = magic == "n+1";
    if (!single_file && magic != "ni1") {
        if (magic[0] == '\0')
            throw FormatError("magic", "no NIfTI-1 magic; ANALYZE 7.5 is not supported, convert to NIfTI-1");
        throw FormatError("magic", "expected 'n+1' or 'ni1'");
    }

    const int16_t ndim = h.get<int16_t>(off::dim);
    if (ndim < 1 || ndim > 7) throw FormatError("dim", "dim[0] must be in 1..7, found " + std::to_string(ndim));
    Dims dims{1, 1, 1};
    for (int i = 1; i <= ndim; ++i) {
        const int16_t d = h.get<int16_t>(off::dim + 2 * i);
        if (d < 1) throw FormatError("dim", "dim[" + std::to_string(i) + "] must be positive");
        if (i <= 3)
            dims[i - 1] = d;
        else if (d != 1)
            throw FormatError("dim", "only single 3-D volumes are supported (dim[" + std::to_string(i) + "] = " + std::to_string(d) + ")");
    }

    const int16_t datatype = h.get<int16_t>(off::datatype);
    const int bpv = bytes_per_voxel(datatype);
    const int16_t bitpix = h.get<int16_t>(off::bitpix);
    if (bitpix != 8 * bpv)
        throw FormatError("bitpix", "bitpix " + std::to_string(bitpix) + " inconsistent with datatype " + std::to_string(datatype));

    std::array<float, 8> pixdim;
    for (int i = 0; i < 8; ++i) pixdim[i] = h.get<float>(off::pixdim + 4 * i);

    const float vox_offset_f = h.get<float>(off::vox_offset);
    if (!std::isfinite(vox_offset_f) || vox_offset_f < 0.0f)
        throw FormatError("vox_offset", "must be a non-negative number");
    const auto vox_offset = static_cast<std::size_t>(vox_offset_f);
    if (single_file && vox_offset < kSingleFileOffset)
        throw FormatError("vox_offset", "single-file images need vox_offset >= 352");

    Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
    const int16_t sform_code = h.get<int16_t>(off::sform_code);
    const int16_t qform_code = h.get<int16_t>(off::qform_code);
    if (sform_code > 0) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) affine(r, c) = h.get<float>(off::srow_x + 16 * r + 4 * c);
        if (condition_number(affine) > 1e12) throw FormatError("srow_x", "sform is singular");
    } else if (qform_code > 0) {
        affine = qform_matrix(h, pixdim);
    } else {
        for (int i = 1; i <= 3; ++i) {
            if (!(pixdim[i] > 0.0f)) throw FormatError("pixdim", "pixdim[" + std::to_string(i) + "] must be positive");
            affine(i - 1, i - 1) = pixdim[i];
        }
    }

    const float slope = h.get<float>(off::scl_slope);
    const float inter = h.get<float>(off::scl_inter);
    const std::string units = descrip_units(h, bytes.data());

    GzHandle image_file;
    gzFile data_src = file.get();
    std::size_t skip = vox_offset > kHeaderSize ? vox_offset - kHeaderSize : 0;
    if (!single_file) {
        image_file = open_read(paired_image_path(path));
        data_src = image_file.get();
        skip = vox_offset;
    }
    if (skip > 0) {
        std::vector<unsigned char> pad(skip);
        if (read_bytes(data_src, pad.data(), skip) != skip)
            throw FormatError("vox_offset", "file ends before the voxel data offset");
    }

    const GridSpec grid(dims, affine);
    const std::size_t n = grid.voxel_count();
    std::vector<unsigned char> raw(n * static_cast<std::size_t>(bpv));
    if (read_bytes(data_src, raw.data(), raw.size()) != raw.size())
        throw FormatError("dim", "voxel data truncated: expected " + std::to_string(raw.size()) + " bytes");

    std::vector<double> data(n);
    switch (datatype) {
        case DT_UINT8: convert<uint8_t>(raw.data(), n, false, data); break;
        case DT_INT16: convert<int16_t>(raw.data(), n, swap, data); break;
        case DT_INT32: convert<int32_t>(raw.data(), n, swap, data); break;
        case DT_FLOAT32: convert<float>(raw.data(), n, swap, data); break;
        case DT_FLOAT64: convert<double>(raw.data(), n, swap, data); break;
    }
    if (slope != 0.0f && std::isfinite(slope) && std::isfinite(inter)) {
        const double s = slope, b = inter;
        for (auto& v : data) v = s * v + b;
    }
    return Volume3D(grid, std::move(data), units);
}

void write_nifti(const Volume3D& vol, const std::filesystem::path& path) {
    const auto& d = vol.dims();
    const auto& sp = vol.spacing();
    const Eigen::Matrix4d& a = vol.affine();

    HeaderWriter w;
    w.put<int32_t>(off::sizeof_hdr, kHeaderSize);
    w.put<int16_t>(off::dim, 3);
    for (int i = 0; i < 3; ++i) w.put<int16_t>(off::dim + 2 * (i + 1), static_cast<int16_t>(d[i]));
    for (int i = 4; i <= 7; ++i) w.put<int16_t>(off::dim + 2 * i, 1);
    w.put<int16_t>(off::datatype, DT_FLOAT32);
    w.put<int16_t>(off::bitpix, 32);

    // qform: closest proper rotation to the normalised linear block.
    Eigen::Matrix3d lin = a.topLeftCorner<3, 3>();
    for (int c = 0; c < 3; ++c) lin.col(c) /= sp[c];
    double qfac = 1.0;
    if (lin.determinant() < 0) {
        qfac = -1.0;
        lin.col(2) = -lin.col(2);
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(lin, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d rot = svd.matrixU() * svd.matrixV().transpose();
    Eigen::Quaterniond q(rot);
    if (q.w() < 0) q.coeffs() = -q.coeffs();

    w.put<float>(off::pixdim, static_cast<float>(qfac));
    for (int i = 0; i < 3; ++i) w.put<float>(off::pixdim + 4 * (i + 1), static_cast<float>(sp[i]));
    for (int i = 4; i < 8; ++i) w.put<float>(off::pixdim + 4 * i, 1.0f);
    w.put<float>(off::vox_offset, static_cast<float>(kSingleFileOffset));
    w.put<float>(off::scl_slope, 1.0f);
    w.put<float>(off::scl_inter, 0.0f);
    w.put<char>(off::xyzt_units, 2);  // NIFTI_UNITS_MM
    w.put_string(off::descrip, "units=" + vol.units(), 79);
    w.put<int16_t>(off::qform_code, 2);
    w.put<int16_t>(off::sform_code, 2);
    w.put<float>(off::quatern_b, static_cast<float>(q.x()));
    w.put<float>(off::quatern_b + 4, static_cast<float>(q.y()));
    w.put<float>(off::quatern_b + 8, static_cast<float>(q.z()));
    for (int r = 0; r < 3; ++r) w.put<float>(off::qoffset_x + 4 * r, static_cast<float>(a(r, 3)));
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) w.put<float>(off::srow_x + 16 * r + 4 * c, static_cast<float>(a(r, c)));
    w.put_string(off::magic, std::string("n+1\0", 4), 4);

    std::vector<float> payload(vol.size());
    std::transform(vol.data().begin(), vol.data().end(), payload.begin(),
                   [](double v) { return static_cast<float>(v); });

    const bool gz = has_suffix(path.string(), ".gz");
    GzHandle f(gzopen(path.c_str(), gz ? "wb6" : "wbT"));
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    const auto write_all = [&](const void* src, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(src);
        while (n > 0) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
            if (gzwrite(f.get(), p, chunk) != static_cast<int>(chunk))
                throw IoError("short write to '" + path.string() + "'");
            p += chunk;
            n -= chunk;
        }
    };
    write_all(w.data(), kSingleFileOffset);
    write_all(payload.data(), payload.size() * sizeof(float));
    if (gzclose(f.release()) != Z_OK) throw IoError("failed to finish writing '" + path.string() + "'");
}

}  // namespace asap
