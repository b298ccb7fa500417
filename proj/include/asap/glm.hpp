#pragma once

#include "asap/mask.hpp"
#include "asap/volume.hpp"

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace asap {

/// Two-sample design: columns are the group-1 indicator, the group-2
/// indicator, then covariates. The default contrast is group1 - group2.
struct DesignMatrix {
    std::vector<std::string> subject_ids;
    std::vector<int> groups;  // 1 or 2 per subject
    std::vector<std::string> covariate_names;
    Eigen::MatrixXd x;
    Eigen::VectorXd contrast;

    static DesignMatrix two_sample(std::vector<std::string> ids, std::vector<int> groups,
                                   std::vector<std::string> covariate_names = {},
                                   const Eigen::MatrixXd& covariates = {});
    /// Appends a covariate column (contrast weight 0).
    DesignMatrix with_covariate(const std::string& name, const std::vector<double>& values) const;
    /// Same covariates with a different group assignment.
    DesignMatrix with_groups(const std::vector<int>& groups) const;

    std::size_t subjects() const { return static_cast<std::size_t>(x.rows()); }
    int dof() const { return static_cast<int>(x.rows() - x.cols()); }
    /// Throws DesignError: bad group codes, wrong contrast length, rank
    /// deficiency or no residual degrees of freedom.
    void validate() const;
};

/// CSV with header `subject_id,group[,covariate...]`. Exactly two distinct
/// group labels are required; the lexicographically smaller label is group 1.
DesignMatrix read_design_csv(const std::filesystem::path& path);

struct StatMap {
    Volume3D t_values;
    int dof = 0;
    Volume3D cluster_labels;  // 0 = background, integer labels otherwise
    std::optional<Volume3D> permutation_p;
};

/// Voxelwise OLS over the in-mask voxels. Zero residual variance gives t = 0.
StatMap fit_glm(const std::vector<Volume3D>& maps, const DesignMatrix& design, const BinaryMask& mask);

struct ClusterInfo {
    int label = 0;
    std::size_t size = 0;
    double peak_t = 0.0;
    std::size_t peak_index = 0;  // linear voxel index of the peak
};

/// Keeps t > threshold voxels in 18-connected clusters of at least
/// `min_cluster_voxels`. Labels run 1..n ordered by each cluster's first voxel.
StatMap threshold_clusters(const StatMap& stat, double t_threshold, int min_cluster_voxels,
                           std::vector<ClusterInfo>* clusters = nullptr);

struct PermutationResult {
    Volume3D p_values;           // familywise-corrected, one-sided
    std::vector<double> max_t;   // one per permutation
    std::uint64_t distinct_relabelings = 0;
    std::optional<std::string> warning;
};

/// Max-T permutation test over group relabelings (covariates stay with
/// their subjects). p = (1 + #{max_t >= t}) / (1 + n_perm).
PermutationResult permutation_maxT(const std::vector<Volume3D>& maps, const DesignMatrix& design,
                                   const BinaryMask& mask, int n_perm, std::uint64_t seed);

/// Mean of each map over the mask, for use as a per-subject covariate.
std::vector<double> mean_in_mask(const std::vector<Volume3D>& maps, const BinaryMask& mask);

/// TSV: label, size, peak_t, peak_voxel_index.
void write_cluster_table(const std::filesystem::path& path, const std::vector<ClusterInfo>& clusters);

/// n choose k, saturating at UINT64_MAX.
std::uint64_t binomial(int n, int k);

}  // namespace asap
