#include "asap/glm.hpp"

#include "asap/error.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace asap {

namespace {

Eigen::MatrixXd group_columns(const std::vector<int>& groups) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(groups.size()), 2);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i] == 1) g(i, 0) = 1.0;
        if (groups[i] == 2) g(i, 1) = 1.0;
    }
    return g;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// Responses of the in-mask voxels: one column per voxel, one row per subject.
struct MaskedData {
    std::vector<std::size_t> voxels;
    Eigen::MatrixXd y;
};

MaskedData gather(const std::vector<Volume3D>& maps, const BinaryMask& mask, std::size_t subjects) {
    if (maps.size() != subjects)
        throw DesignError("design has " + std::to_string(subjects) + " subjects but " + std::to_string(maps.size()) +
                          " maps were given");
    for (std::size_t s = 0; s < maps.size(); ++s)
        require_same_grid(maps[s].grid(), mask.grid(), "map " + std::to_string(s) + " vs analysis mask");
    MaskedData d;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) d.voxels.push_back(i);
    d.y.resize(static_cast<Eigen::Index>(subjects), static_cast<Eigen::Index>(d.voxels.size()));
    for (std::size_t s = 0; s < subjects; ++s)
        for (std::size_t v = 0; v < d.voxels.size(); ++v) d.y(s, v) = maps[s][d.voxels[v]];
    return d;
}

// t statistic for every column of y.
Eigen::VectorXd t_stats(const Eigen::MatrixXd& x, const Eigen::VectorXd& c, const Eigen::MatrixXd& y) {
    const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
    const Eigen::MatrixXd pinv = xtx_inv * x.transpose();
    const double q = c.dot(xtx_inv * c);
    const double dof = static_cast<double>(x.rows() - x.cols());
    const Eigen::MatrixXd beta = pinv * y;
    const Eigen::MatrixXd resid = y - x * beta;
    const Eigen::RowVectorXd effect = c.transpose() * beta;
    Eigen::VectorXd t(y.cols());
    for (Eigen::Index v = 0; v < y.cols(); ++v) {
        const double rss = resid.col(v).squaredNorm();
        const double scale = y.col(v).squaredNorm();
        if (!(rss > 1e-24 * std::max(scale, 1e-300))) {
            t[v] = 0.0;
            continue;
        }
        t[v] = effect[v] / std::sqrt(rss / dof * q);
    }
    return t;
}

}  // namespace

DesignMatrix DesignMatrix::two_sample(std::vector<std::string> ids, std::vector<int> groups,
                                      std::vector<std::string> covariate_names, const Eigen::MatrixXd& covariates) {
    DesignMatrix d;
    const auto n = static_cast<Eigen::Index>(groups.size());
    if (ids.size() != groups.size()) throw DesignError("subject id and group counts differ");
    if (covariates.size() > 0 && covariates.rows() != n) throw DesignError("covariate rows differ from subject count");
    const Eigen::Index k = covariates.size() > 0 ? covariates.cols() : 0;
    if (static_cast<Eigen::Index>(covariate_names.size()) != k) throw DesignError("covariate names do not match columns");
    d.subject_ids = std::move(ids);
    d.groups = std::move(groups);
    d.covariate_names = std::move(covariate_names);
    d.x.resize(n, 2 + k);
    d.x.leftCols(2) = group_columns(d.groups);
    if (k > 0) d.x.rightCols(k) = covariates;
    d.contrast = Eigen::VectorXd::Zero(2 + k);
    d.contrast[0] = 1.0;
    d.contrast[1] = -1.0;
    return d;
}

DesignMatrix DesignMatrix::with_covariate(const std::string& name, const std::vector<double>& values) const {
    if (static_cast<Eigen::Index>(values.size()) != x.rows()) throw DesignError("covariate '" + name + "' has wrong length");
    DesignMatrix d = *this;
    d.covariate_names.push_back(name);
    d.x.conservativeResize(Eigen::NoChange, x.cols() + 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) d.x(i, x.cols()) = values[i];
    d.contrast.conservativeResize(contrast.size() + 1);
    d.contrast[contrast.size()] = 0.0;
    return d;
}

DesignMatrix DesignMatrix::with_groups(const std::vector<int>& g) const {
    DesignMatrix d = *this;
    d.groups = g;
    d.x.leftCols(2) = group_columns(g);
    return d;
}

void DesignMatrix::validate() const {
    const auto n = x.rows();
    if (static_cast<Eigen::Index>(groups.size()) != n || static_cast<Eigen::Index>(subject_ids.size()) != n)
        throw DesignError("design rows, groups and subject ids differ in length");
    for (std::size_t i = 0; i < groups.size(); ++i)
        if (groups[i] != 1 && groups[i] != 2)
            throw DesignError("subject '" + subject_ids[i] + "' is not in exactly one of groups 1 and 2");
    if (contrast.size() != x.cols())
        throw DesignError("contrast has " + std::to_string(contrast.size()) + " weights for " +
                          std::to_string(x.cols()) + " columns");
    if (!x.allFinite()) throw DesignError("design contains non-finite values");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < x.cols())
        throw DesignError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                          std::to_string(x.cols()) + " columns)");
    if (dof() <= 0) throw DesignError("design leaves no residual degrees of freedom");
}

DesignMatrix read_design_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read design file " + path.string());
    std::string line;
    std::vector<std::string> header;
    int lineno = 0;
    while (header.empty() && std::getline(in, line)) {
        ++lineno;
        if (!trim(line).empty()) header = split_csv(line);
    }
    if (header.size() < 2 || header[0] != "subject_id" || header[1] != "group")
        throw DesignError(path.string() + ": header must start with subject_id,group");
    std::vector<std::string> ids, labels;
    std::vector<std::vector<double>> cov;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cells = split_csv(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (cells.size() != header.size())
            throw DesignError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                              std::to_string(cells.size()));
        ids.push_back(cells[0]);
        labels.push_back(cells[1]);
        std::vector<double> row;
        for (std::size_t c = 2; c < cells.size(); ++c) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cells[c], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != cells[c].size())
                throw DesignError(where + ": covariate '" + header[c] + "' value '" + cells[c] + "' is not numeric");
            row.push_back(v);
        }
        cov.push_back(std::move(row));
    }
    const std::set<std::string> distinct(labels.begin(), labels.end());
    if (distinct.size() != 2)
        throw DesignError(path.string() + ": expected exactly two group labels, found " +
                          std::to_string(distinct.size()));
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
        throw DesignError(path.string() + ": duplicate subject_id");
    std::vector<int> groups;
    for (const auto& l : labels) groups.push_back(l == *distinct.begin() ? 1 : 2);
    const Eigen::Index k = static_cast<Eigen::Index>(header.size()) - 2;
    Eigen::MatrixXd c(static_cast<Eigen::Index>(ids.size()), k);
    for (std::size_t r = 0; r < cov.size(); ++r)
        for (Eigen::Index j = 0; j < k; ++j) c(r, j) = cov[r][j];
    auto d = DesignMatrix::two_sample(std::move(ids), std::move(groups),
                                      std::vector<std::string>(header.begin() + 2, header.end()),
                                      k > 0 ? c : Eigen::MatrixXd());
    d.validate();
    return d;
}

StatMap fit_glm(const std::vector<Volume3D>& maps, const DesignMatrix& design, const BinaryMask& mask) {
    design.validate();
    const auto data = gather(maps, mask, design.subjects());
    const auto t = t_stats(design.x, design.contrast, data.y);
    std::vector<double> out(mask.size(), 0.0);
    for (std::size_t v = 0; v < data.voxels.size(); ++v) out[data.voxels[v]] = t[v];
    StatMap s;
    s.t_values = Volume3D(mask.grid(), std::move(out), "t");
    s.dof = design.dof();
    s.cluster_labels = Volume3D(mask.grid(), "label");
    return s;
}

StatMap threshold_clusters(const StatMap& stat, double t_threshold, int min_cluster_voxels,
                           std::vector<ClusterInfo>* clusters) {
    if (!std::isfinite(t_threshold)) throw ParameterError("cluster t threshold must be finite");
    if (min_cluster_voxels < 1) throw ParameterError("minimum cluster size must be at least 1");
    const auto& t = stat.t_values;
    std::vector<std::uint8_t> above(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) above[i] = t[i] > t_threshold;
    std::vector<int> labels;
    const int n = label_components(above, t.dims(), Connectivity::edge18, labels);
    std::vector<ClusterInfo> info(n + 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels[i];
        if (l == 0) continue;
        auto& c = info[l];
        if (c.size == 0 || t[i] > c.peak_t) {
            c.peak_t = t[i];
            c.peak_index = i;
        }
        ++c.size;
    }
    std::vector<int> remap(n + 1, 0);
    std::vector<ClusterInfo> kept;
    for (int l = 1; l <= n; ++l)
        if (info[l].size >= static_cast<std::size_t>(min_cluster_voxels)) {
            remap[l] = static_cast<int>(kept.size()) + 1;
            info[l].label = remap[l];
            kept.push_back(info[l]);
        }
    std::vector<double> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = remap[labels[i]];
    StatMap s = stat;
    s.cluster_labels = Volume3D(t.grid(), std::move(out), "label");
    if (clusters) *clusters = std::move(kept);
    return s;
}

std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 r = 1;
    for (int i = 1; i <= k; ++i) {
        r = r * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
        if (r > std::numeric_limits<std::uint64_t>::max()) return std::numeric_limits<std::uint64_t>::max();
    }
    return static_cast<std::uint64_t>(r);
}

PermutationResult permutation_maxT(const std::vector<Volume3D>& maps, const DesignMatrix& design,
                                   const BinaryMask& mask, int n_perm, std::uint64_t seed) {
    if (n_perm < 100) throw ParameterError("at least 100 permutations are required");
    design.validate();
    const auto data = gather(maps, mask, design.subjects());
    if (data.voxels.empty()) throw ParameterError("analysis mask is empty");
    const auto observed = t_stats(design.x, design.contrast, data.y);

    PermutationResult r;
    const int n1 = static_cast<int>(std::count(design.groups.begin(), design.groups.end(), 1));
    r.distinct_relabelings = binomial(static_cast<int>(design.groups.size()), n1);
    if (static_cast<std::uint64_t>(n_perm) > r.distinct_relabelings)
        r.warning = "only " + std::to_string(r.distinct_relabelings) + " distinct group relabelings exist for " +
                    std::to_string(n1) + " vs " + std::to_string(design.groups.size() - n1) + " subjects; " +
                    std::to_string(n_perm) + " permutations will repeat some of them";

    // Relabelings are drawn up front so the result does not depend on threading.
    std::mt19937_64 rng(seed);
    std::vector<std::vector<int>> perms(n_perm, design.groups);
    for (auto& p : perms) std::shuffle(p.begin(), p.end(), rng);

    r.max_t.assign(n_perm, 0.0);
    const unsigned workers = std::max(1u, std::min(8u, std::thread::hardware_concurrency()));
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (int p = static_cast<int>(w); p < n_perm; p += static_cast<int>(workers)) {
                    const auto t = t_stats(design.with_groups(perms[p]).x, design.contrast, data.y);
                    r.max_t[p] = t.maxCoeff();
                }
            });
    }
    std::vector<double> sorted = r.max_t;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> p(mask.size(), 1.0);
    for (std::size_t v = 0; v < data.voxels.size(); ++v) {
        const auto ge = sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), observed[v]);
        p[data.voxels[v]] = (1.0 + static_cast<double>(ge)) / (1.0 + n_perm);
    }
    r.p_values = Volume3D(mask.grid(), std::move(p), "p");
    return r;
}

std::vector<double> mean_in_mask(const std::vector<Volume3D>& maps, const BinaryMask& mask) {
    std::vector<double> out;
    const std::size_t n = mask.count();
    if (n == 0) throw ParameterError("analysis mask is empty");
    for (const auto& m : maps) {
        require_same_grid(m.grid(), mask.grid(), "map vs analysis mask");
        double s = 0.0;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) s += m[i];
        out.push_back(s / static_cast<double>(n));
    }
    return out;
}

void write_cluster_table(const std::filesystem::path& path, const std::vector<ClusterInfo>& clusters) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write cluster table " + path.string());
    out << "label\tsize\tpeak_t\tpeak_voxel_index\n" << std::setprecision(10);
    for (const auto& c : clusters) out << c.label << '\t' << c.size << '\t' << c.peak_t << '\t' << c.peak_index << '\n';
    if (!out) throw IoError("failed writing cluster table " + path.string());
}

}  // namespace asap
