#include "casa/report_json.hpp"

#include "casa/errors.hpp"

namespace casa {

using nlohmann::json;

json config_to_json(const CasaConfig& cfg) {
    return json{{"energy_fraction", cfg.energy_fraction},
                {"tau", cfg.tau},
                {"epsilon", cfg.epsilon},
                {"q_dom", cfg.q_dom},
                {"q_act", cfg.q_act},
                {"out_rank", cfg.out_rank},
                {"residual", residual_policy_name(cfg.residual)},
                {"population", quantile_population_name(cfg.population)}};
}

CasaConfig config_from_json(const json& j, CasaConfig base) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "energy_fraction") base.energy_fraction = value.get<double>();
            else if (key == "tau") base.tau = value.get<double>();
            else if (key == "epsilon") base.epsilon = value.get<double>();
            else if (key == "q_dom") base.q_dom = value.get<double>();
            else if (key == "q_act") base.q_act = value.get<double>();
            else if (key == "out_rank") base.out_rank = value.get<std::size_t>();
            else if (key == "residual") {
                const auto name = value.get<std::string>();
                if (name == "passthrough") base.residual = ResidualPolicy::passthrough;
                else if (name == "discard") base.residual = ResidualPolicy::discard;
                else throw UsageError("unknown residual policy \"" + name + "\"");
            } else if (key == "population") {
                const auto name = value.get<std::string>();
                if (name == "positive-only")
                    base.population = QuantilePopulation::positive_only;
                else if (name == "all") base.population = QuantilePopulation::all;
                else throw UsageError("unknown quantile population \"" + name + "\"");
            } else {
                throw UsageError("unknown config key \"" + key + "\"");
            }
        } catch (const json::exception& ex) {
            throw UsageError("config key \"" + key + "\": " + ex.what());
        }
    }
    return base;
}

json layer_report_to_json(const LayerReport& layer) {
    return json{{"key", layer.key},
                {"m", layer.m},
                {"k", layer.k},
                {"M", layer.cluster_count},
                {"dominant_send", layer.dominant_send},
                {"dominant_recv", layer.dominant_recv},
                {"counts",
                 {{"restore", layer.restored},
                  {"preserve", layer.preserved},
                  {"arbitrate", layer.arbitrated}}},
                {"arbitration_threshold", layer.arbitration_threshold},
                {"residual_norm", layer.residual_norm},
                {"factorization_error", layer.factorization_error}};
}

json model_report_to_json(const ModelReport& report) {
    json layers = json::array();
    for (const LayerReport& layer : report.layers)
        layers.push_back(layer_report_to_json(layer));
    return json{{"schema", kReportSchema},
                {"config", config_to_json(report.config)},
                {"layers", std::move(layers)}};
}

json ablation_stats_to_json(const std::vector<AblationLayerStats>& stats) {
    json out = json::array();
    for (const AblationLayerStats& st : stats) {
        const double fraction =
            st.routing_energy > 0.0 ? st.masked_energy / st.routing_energy : 0.0;
        out.push_back(json{{"key", st.key},
                           {"k", st.k},
                           {"M", st.cluster_count},
                           {"routing_energy", st.routing_energy},
                           {"masked_energy", st.masked_energy},
                           {"masked_fraction", fraction},
                           {"selected_blocks", st.selected_blocks}});
    }
    return out;
}

} // namespace casa
