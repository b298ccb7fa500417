#include "asap/qc.hpp"

#include "asap/error.hpp"
#include "asap/nifti.hpp"
#include "asap/resample.hpp"
#include "asap/stats.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace asap {

namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void chunk(std::string& out, const char* type, const std::string& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::string body = std::string(type, 4) + data;
    out += body;
    put_u32(out, static_cast<std::uint32_t>(
                     crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

std::array<std::uint8_t, 3> hot(double v) {
    const auto c = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(x, 0.0, 1.0))); };
    return {c(3.0 * v), c(3.0 * v - 1.0), c(3.0 * v - 2.0)};
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

const char* kStyle = R"(
body { font-family: sans-serif; margin: 2em; background: #fafafa; color: #222; }
section { background: #fff; border: 1px solid #ddd; padding: 1em; margin-bottom: 1.5em; }
.badge { display: inline-block; padding: 0.15em 0.6em; border-radius: 0.3em; color: #fff; font-weight: bold; }
.pass { background: #2e7d32; }
.fail { background: #c62828; }
table { border-collapse: collapse; margin: 0.5em 0; }
td, th { border: 1px solid #ccc; padding: 0.2em 0.6em; text-align: left; }
img { image-rendering: pixelated; border: 1px solid #444; }
.error { color: #c62828; font-family: monospace; }
)";

}  // namespace

void write_png(const fs::path& path, const RgbImage& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
        throw ParameterError("write_png: pixel buffer does not match the image size");
    std::string raw;
    raw.reserve(static_cast<std::size_t>(img.height) * (1 + 3 * img.width));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        raw.append(reinterpret_cast<const char*>(img.pixels.data()) + static_cast<std::size_t>(y) * img.width * 3,
                   static_cast<std::size_t>(img.width) * 3);
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    std::string z(len, '\0');
    if (compress2(reinterpret_cast<Bytef*>(z.data()), &len, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("write_png: compression failed");
    z.resize(len);

    std::string ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB

    std::string png("\x89PNG\r\n\x1a\n", 8);
    chunk(png, "IHDR", ihdr);
    chunk(png, "IDAT", z);
    chunk(png, "IEND", "");
    std::ofstream out(path, std::ios::binary);
    if (!out || !out.write(png.data(), static_cast<std::streamsize>(png.size())))
        throw IoError("cannot write " + path.string());
}

int mosaic_slice_index(int n, double fraction) {
    return static_cast<int>(std::lround(fraction * (n - 1)));
}

double overlay_window(const Volume3D& cbf, const std::optional<BinaryMask>& mask) {
    std::vector<double> v;
    for (std::size_t i = 0; i < cbf.size(); ++i) {
        const bool in = mask ? (*mask)[i] : (std::isfinite(cbf[i]) && cbf[i] != 0.0);
        if (in && std::isfinite(cbf[i])) v.push_back(cbf[i]);
    }
    return percentile(v, 98.0);
}

RgbImage render_mosaic(const Volume3D& cbf, const Volume3D& underlay, const std::optional<BinaryMask>& mask,
                       int zoom) {
    require_same_grid(cbf.grid(), underlay.grid(), "QC mosaic CBF and underlay");
    if (mask) require_same_grid(cbf.grid(), mask->grid(), "QC mosaic CBF and mask");
    if (zoom < 1) throw ParameterError("render_mosaic: zoom must be >= 1");
    const auto [nx, ny, nz] = cbf.dims();
    double hi = overlay_window(cbf, mask);
    if (!(hi > 0.0)) hi = 1.0;
    std::vector<double> u;
    for (double x : underlay.data())
        if (std::isfinite(x) && x > 0.0) u.push_back(x);
    double uhi = percentile(u, 99.0);
    if (!(uhi > 0.0)) uhi = 1.0;

    const int cw = zoom * std::max(nx, ny), ch = zoom * std::max(ny, nz), gap = 2;
    RgbImage img;
    img.width = 3 * cw + 4 * gap;
    img.height = 3 * ch + 4 * gap;
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);

    for (int row = 0; row < 3; ++row) {
        // Tile size in voxels and the in-plane voxel for tile pixel (a, b).
        const int tw = row == 2 ? ny : nx;
        const int th = row == 0 ? ny : nz;
        for (int col = 0; col < 3; ++col) {
            const double f = kMosaicFractions[col];
            const int slice = mosaic_slice_index(row == 0 ? nz : row == 1 ? ny : nx, f);
            const int x0 = gap + col * (cw + gap) + (cw - zoom * tw) / 2;
            const int y0 = gap + row * (ch + gap) + (ch - zoom * th) / 2;
            for (int b = 0; b < th; ++b)
                for (int a = 0; a < tw; ++a) {
                    const int up = th - 1 - b;  // superior / anterior at the top
                    int i, j, k;
                    if (row == 0) {
                        i = a, j = up, k = slice;
                    } else if (row == 1) {
                        i = a, j = slice, k = up;
                    } else {
                        i = slice, j = a, k = up;
                    }
                    const std::size_t idx = cbf.grid().index(i, j, k);
                    const double g = 255.0 * std::clamp(underlay[idx] / uhi, 0.0, 1.0);
                    std::array<double, 3> rgb{g, g, g};
                    const double c = cbf[idx];
                    const bool show = std::isfinite(c) && c > 0.0 && (!mask || (*mask)[idx]);
                    if (show) {
                        const auto h = hot(c / hi);
                        for (int q = 0; q < 3; ++q) rgb[q] = 0.3 * rgb[q] + 0.7 * h[q];
                    }
                    for (int dy = 0; dy < zoom; ++dy)
                        for (int dx = 0; dx < zoom; ++dx) {
                            const std::size_t p =
                                (static_cast<std::size_t>(y0 + zoom * b + dy) * img.width + x0 + zoom * a + dx) * 3;
                            for (int q = 0; q < 3; ++q)
                                img.pixels[p + q] = static_cast<std::uint8_t>(std::lround(rgb[q]));
                        }
                }
        }
    }
    return img;
}

fs::path emit_qc_report(const RunReport& run, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create QC directory " + out_dir.string());

    std::optional<Volume3D> tpl;
    if (run.parameters.contains("normalize")) {
        const fs::path p = run.parameters["normalize"].value("template", "");
        if (!p.empty() && fs::is_regular_file(p)) tpl = read_nifti(p);
    }

    std::ostringstream h;
    h << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Quick check: " << escape(run.run_id)
      << "</title><style>" << kStyle << "</style></head><body>\n";
    const auto failed = std::count_if(run.subjects.begin(), run.subjects.end(), [](const auto& s) { return !s.ok; });
    h << "<h1>Quick check: run " << escape(run.run_id) << "</h1>\n<p>" << run.subjects.size() << " subjects, "
      << failed << " failed. Started " << escape(run.started_at) << ", total " << fixed(run.seconds, 1)
      << " s.</p>\n";

    for (const auto& s : run.subjects) {
        h << "<section id=\"" << escape(s.subject_id) << "\"><h2>" << escape(s.subject_id) << " <span class=\"badge "
          << (s.ok ? "pass\">PASS" : "fail\">FAIL") << "</span></h2>\n";
        if (!s.ok)
            h << "<p>Failed at step <b>" << escape(s.failed_step.value_or("?")) << "</b>: <span class=\"error\">"
              << escape(s.error) << "</span></p>\n";

        if (s.normalized_cbf) {
            try {
                const auto cbf = read_nifti(run.run_dir / *s.normalized_cbf);
                std::optional<BinaryMask> mask;
                if (s.normalized_mask) mask = BinaryMask::from_volume(read_nifti(run.run_dir / *s.normalized_mask));
                const auto under = tpl ? resample(*tpl, cbf.grid(), Interp::trilinear) : Volume3D(cbf.grid());
                const std::string png = s.subject_id + "_mosaic.png";
                write_png(out_dir / png, render_mosaic(cbf, under, mask));
                h << "<p><img src=\"" << escape(png) << "\" alt=\"normalized CBF mosaic\"><br>"
                  << "Rows: axial, coronal, sagittal at 25/50/75%. Overlay window 0 to "
                  << fixed(overlay_window(cbf, mask), 2) << " " << escape(cbf.units()) << ".</p>\n";
            } catch (const Error& e) {
                h << "<p class=\"error\">mosaic unavailable: " << escape(e.what()) << "</p>\n";
            }
        }

        h << "<table><tr><th>#</th><th>step</th><th>status</th><th>seconds</th><th>note</th></tr>\n";
        for (const auto& st : s.steps)
            h << "<tr><td>" << st.number << "</td><td>" << escape(st.name) << "</td><td>" << escape(st.status)
              << "</td><td>" << fixed(st.seconds, 2) << "</td><td>" << escape(st.note) << "</td></tr>\n";
        h << "</table>\n";

        if (!s.metrics.empty()) {
            h << "<table><tr><th>metric</th><th>value</th></tr>\n";
            for (const auto& [k, v] : s.metrics) h << "<tr><td>" << escape(k) << "</td><td>" << v << "</td></tr>\n";
            h << "</table>\n";
        }
        if (s.pvc) {
            const auto& d = *s.pvc;
            h << "<table><tr><th>PVC in mask</th><th>solved</th><th>rank deficient</th><th>low support</th>"
              << "<th>negative clamped</th></tr><tr><td>" << d.in_mask << "</td><td>" << d.solved << "</td><td>"
              << d.rank_deficient << "</td><td>" << d.low_support << "</td><td>" << d.negative_clamped
              << "</td></tr></table>\n";
        }
        h << "</section>\n";
    }
    h << "</body></html>\n";

    const auto path = out_dir / "index.html";
    std::ofstream out(path);
    if (!out || !(out << h.str())) throw IoError("cannot write " + path.string());
    return path;
}

}  // namespace asap
