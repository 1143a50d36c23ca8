#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "glyphforge/generator.hpp"
#include "glyphforge/glyphdata.hpp"

namespace glyphforge {

struct PixelMetrics {
    double l1 = 0;    // mean |generated - target|
    double rmse = 0;  // sqrt(mean (generated - target)^2)
};

PixelMetrics pixel_metrics(const Tensor<float>& generated, const Tensor<float>& target);

struct EvalRow {
    std::uint32_t codepoint = 0;
    PixelMetrics metrics;
};

struct Summary {
    double mean = 0, median = 0, worst = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;  // descending l1, ties by ascending codepoint
    Summary l1;
    Summary rmse;
    std::size_t count = 0;
};

/// Sorts rows and recomputes the aggregates from them.
EvalReport make_report(std::vector<EvalRow> rows);

/// Eval-mode generation of every sample in the view, scored against its target.
EvalReport evaluate(const Generator<float>& generator, const PackView& view);

std::string report_tsv(const EvalReport& report);
nlohmann::json report_json(const EvalReport& report);

}  // namespace glyphforge
