#include "asap/quantify.hpp"

#include "asap/error.hpp"
#include "asap/stats.hpp"

#include <cmath>

namespace asap {

AcquisitionParams AcquisitionParams::pcasl_defaults() { return {}; }

AcquisitionParams AcquisitionParams::pasl_defaults() {
    AcquisitionParams p;
    p.modality = Modality::pasl;
    p.label_duration_s.reset();
    p.inversion_time_s = 1.8;
    p.bolus_duration_s = 0.8;
    p.alpha = 0.98;
    return p;
}

void AcquisitionParams::validate() const {
    const auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError(std::string(name) + " must be a positive number");
    };
    positive(t1_blood_s, "t1_blood_s");
    positive(lambda_ml_per_g, "lambda_ml_per_g");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in (0, 1]");
    if (!(background_suppression_efficiency > 0.0 && background_suppression_efficiency <= 1.0))
        throw ParameterError("background_suppression_efficiency must lie in (0, 1]");
    positive(difference_divisor, "difference_divisor");
    if (!(pd_threshold_fraction >= 0.0 && pd_threshold_fraction < 1.0))
        throw ParameterError("pd_threshold_fraction must lie in [0, 1)");
    if (modality == Modality::pcasl) {
        positive(post_label_delay_s, "post_label_delay_s");
        if (!label_duration_s) throw ParameterError("pCASL requires label_duration_s");
        positive(*label_duration_s, "label_duration_s");
    } else {
        if (!inversion_time_s) throw ParameterError("PASL requires inversion_time_s");
        if (!bolus_duration_s) throw ParameterError("PASL requires bolus_duration_s");
        positive(*inversion_time_s, "inversion_time_s");
        positive(*bolus_duration_s, "bolus_duration_s");
        if (*bolus_duration_s > *inversion_time_s)
            throw ParameterError("bolus_duration_s (TI1) must not exceed inversion_time_s (TI)");
    }
}

double pcasl_scale(const AcquisitionParams& p) {
    p.validate();
    if (p.modality != Modality::pcasl) throw ParameterError("pCASL quantification needs pCASL parameters");
    const double t1 = p.t1_blood_s;
    const double tau = *p.label_duration_s;
    const double alpha = p.alpha * p.background_suppression_efficiency;
    return 6000.0 * p.lambda_ml_per_g * std::exp(p.post_label_delay_s / t1) /
           (2.0 * alpha * t1 * (1.0 - std::exp(-tau / t1)) * p.difference_divisor);
}

double pasl_scale(const AcquisitionParams& p) {
    p.validate();
    if (p.modality != Modality::pasl) throw ParameterError("PASL quantification needs PASL parameters");
    const double alpha = p.alpha * p.background_suppression_efficiency;
    return 6000.0 * p.lambda_ml_per_g * std::exp(*p.inversion_time_s / p.t1_blood_s) /
           (2.0 * alpha * *p.bolus_duration_s * p.difference_divisor);
}

namespace {

Volume3D apply_model(const Volume3D& diff, const Volume3D& pd, double scale, double threshold_fraction) {
    require_same_grid(diff.grid(), pd.grid(), "difference image vs proton-density image");
    const double threshold = threshold_fraction * robust_max(pd.data());
    std::vector<double> out(diff.size(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m0 = pd[i];
        if (!(m0 > 0.0) || m0 < threshold || !std::isfinite(m0)) continue;
        const double v = scale * diff[i] / m0;
        out[i] = std::isfinite(v) ? v : 0.0;
    }
    return Volume3D(diff.grid(), std::move(out), kCbfUnits);
}

}  // namespace

Volume3D quantify_pcasl(const Volume3D& diff, const Volume3D& pd, const AcquisitionParams& params) {
    return apply_model(diff, pd, pcasl_scale(params), params.pd_threshold_fraction);
}

Volume3D quantify_pasl(const Volume3D& diff, const Volume3D& pd, const AcquisitionParams& params) {
    return apply_model(diff, pd, pasl_scale(params), params.pd_threshold_fraction);
}

Volume3D quantify(const Volume3D& diff, const Volume3D& pd, const AcquisitionParams& params) {
    return params.modality == Modality::pcasl ? quantify_pcasl(diff, pd, params)
                                              : quantify_pasl(diff, pd, params);
}

}  // namespace asap
