#pragma once

#include "asap/volume.hpp"

#include <optional>

namespace asap {

enum class Modality { pcasl, pasl };

/// Single-delay kinetic model parameters. Times in seconds.
struct AcquisitionParams {
    Modality modality = Modality::pcasl;
    double post_label_delay_s = 2.025;           // PLD, pCASL
    std::optional<double> label_duration_s = 1.5; // tau, pCASL
    std::optional<double> inversion_time_s;       // TI, PASL
    std::optional<double> bolus_duration_s;       // TI1, PASL
    double lambda_ml_per_g = 0.9;
    double alpha = 0.85;
    double t1_blood_s = 1.65;
    /// PD mask: voxels below this fraction of the 99th-percentile PD are 0.
    double pd_threshold_fraction = 0.05;
    /// Multiplies alpha; 1 means no background-suppression loss modelled.
    double background_suppression_efficiency = 1.0;
    /// Divides the difference image, e.g. when it holds a sum over NEX
    /// repeats rather than their mean. 1 means already averaged.
    double difference_divisor = 1.0;

    static AcquisitionParams pcasl_defaults();
    static AcquisitionParams pasl_defaults();

    /// Throws ParameterError on the first violated constraint.
    void validate() const;
};

/// Per-voxel scale factor s such that CBF = s * dM / M_PD.
double pcasl_scale(const AcquisitionParams& p);
double pasl_scale(const AcquisitionParams& p);

Volume3D quantify_pcasl(const Volume3D& diff, const Volume3D& pd, const AcquisitionParams& params);
Volume3D quantify_pasl(const Volume3D& diff, const Volume3D& pd, const AcquisitionParams& params);

/// Dispatches on params.modality.
Volume3D quantify(const Volume3D& diff, const Volume3D& pd, const AcquisitionParams& params);

inline constexpr const char* kCbfUnits = "ml/100g/min";

}  // namespace asap
