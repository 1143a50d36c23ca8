#include "glyphforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace glyphforge {

PixelMetrics pixel_metrics(const Tensor<float>& generated, const Tensor<float>& target) {
    if (generated.shape() != target.shape()) {
        throw DimensionError("pixel_metrics: shape mismatch " + shape_string(generated.shape()) + " vs " +
                             shape_string(target.shape()));
    }
    const Eigen::ArrayXd diff = (generated.values().cast<double>() - target.values().cast<double>()).array();
    const auto n = static_cast<double>(diff.size());
    return {diff.abs().sum() / n, std::sqrt(diff.square().sum() / n)};
}

namespace {

Summary summarize(std::vector<double> values) {
    Summary s;
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    double total = 0;
    for (double v : values) total += v;
    const std::size_t n = values.size();
    s.mean = total / static_cast<double>(n);
    s.median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    s.worst = values.back();
    return s;
}

}  // namespace

EvalReport make_report(std::vector<EvalRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
        if (a.metrics.l1 != b.metrics.l1) return a.metrics.l1 > b.metrics.l1;
        return a.codepoint < b.codepoint;
    });
    EvalReport report;
    std::vector<double> l1, rmse;
    for (const auto& r : rows) {
        l1.push_back(r.metrics.l1);
        rmse.push_back(r.metrics.rmse);
    }
    report.l1 = summarize(std::move(l1));
    report.rmse = summarize(std::move(rmse));
    report.count = rows.size();
    report.rows = std::move(rows);
    return report;
}

EvalReport evaluate(const Generator<float>& generator, const PackView& view) {
    if (view.size() == 0) throw ParameterError("evaluate: empty view");
    NoGradGuard no_grad;
    Rng unused;
    std::vector<EvalRow> rows;
    for (std::size_t i = 0; i < view.size(); ++i) {
        const PairedSample s = sample_at(view, i);
        const Shape batched{1, 1, s.source.dim(1), s.source.dim(2)};
        const auto out = generate(generator, s.source.reshape(batched), Mode::eval, unused).output;
        rows.push_back({s.codepoint, pixel_metrics(out, s.target.reshape(batched))});
    }
    return make_report(std::move(rows));
}

std::string report_tsv(const EvalReport& report) {
    std::string out = "codepoint\tl1\trmse\n";
    char buf[128];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof buf, "%s\t%.9g\t%.9g\n", codepoint_hex(r.codepoint).c_str(), r.metrics.l1,
                      r.metrics.rmse);
        out += buf;
    }
    for (const auto& [label, s] : {std::pair{"l1", report.l1}, std::pair{"rmse", report.rmse}}) {
        std::snprintf(buf, sizeof buf, "# %s mean=%.9g median=%.9g worst=%.9g\n", label, s.mean, s.median, s.worst);
        out += buf;
    }
    return out;
}

nlohmann::json report_json(const EvalReport& report) {
    auto summary = [](const Summary& s) { return nlohmann::json{{"mean", s.mean}, {"median", s.median}, {"worst", s.worst}}; };
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"codepoint", codepoint_hex(r.codepoint)}, {"l1", r.metrics.l1}, {"rmse", r.metrics.rmse}});
    }
    return {{"count", report.count},
            {"aggregate", {{"l1", summary(report.l1)}, {"rmse", summary(report.rmse)}}},
            {"rows", std::move(rows)}};
}

}  // namespace glyphforge
