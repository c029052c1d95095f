#pragma once

#include <string>

#include <json.hpp>

#include "casa/ablation.hpp"
#include "casa/transfer.hpp"

namespace casa {

inline constexpr std::string_view kReportSchema = "casa-report/1";

nlohmann::json config_to_json(const CasaConfig& cfg);
CasaConfig config_from_json(const nlohmann::json& j, CasaConfig base = {});

nlohmann::json layer_report_to_json(const LayerReport& layer);
nlohmann::json model_report_to_json(const ModelReport& report);

nlohmann::json ablation_stats_to_json(const std::vector<AblationLayerStats>& stats);

} // namespace casa
