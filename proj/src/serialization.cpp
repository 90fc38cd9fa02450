#include "prodssm/serialization.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace prodssm {

using nlohmann::json;

namespace {

json network_to_json(const NetworkSpec& spec) {
    json layers = json::array();
    for (const LayerSpec& l : spec.layers) {
        if (l.kind == LayerKind::Affine) {
            layers.push_back({{"type", "affine"}, {"out", l.out}});
        } else {
            layers.push_back({{"type", "relu"}});
        }
    }
    return {{"input_dim", spec.input_dim}, {"residual", spec.residual}, {"layers", layers}};
}

NetworkSpec network_from_json(const json& j) {
    NetworkSpec spec;
    spec.input_dim = j.at("input_dim").get<Eigen::Index>();
    spec.residual = j.at("residual").get<bool>();
    for (const json& l : j.at("layers")) {
        const std::string type = l.at("type").get<std::string>();
        if (type == "affine") {
            spec.layers.push_back({LayerKind::Affine, l.at("out").get<Eigen::Index>()});
        } else if (type == "relu") {
            spec.layers.push_back({LayerKind::Relu, 0});
        } else {
            throw ConfigError("model file: unknown layer type '" + type + "'");
        }
    }
    return spec;
}

json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vec_from_json(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i).transpose()));
    return rows;
}

Mat mat_from_json(const json& j) {
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    Mat m(rows, rows == 0 ? 0 : static_cast<Eigen::Index>(j.at(0).size()));
    for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = vec_from_json(j.at(i)).transpose();
    return m;
}

}  // namespace

std::string model_to_json(const ProDssmModel<double>& model) {
    json j;
    j["format"] = kModelFormat;
    j["scheme"] = to_string(model.scheme);
    j["state_dim"] = model.state_dim();
    j["obs_dim"] = model.obs_dim();
    j["weight_dim"] = model.weight_dim();
    j["f"] = network_to_json(model.f_spec);
    if (model.variance.kind == VarianceKind::ConstantDiag) {
        j["variance"] = {{"kind", "constant_diag"}, {"log_var", vec_to_json(model.variance.log_var)}};
    } else {
        j["variance"] = {{"kind", "log_var_net"}, {"net", network_to_json(model.variance.net)}};
    }
    j["g"] = network_to_json(model.g_spec);
    j["g_params"] = vec_to_json(model.g_params);
    j["log_r"] = vec_to_json(model.log_r);
    j["initial_mean"] = vec_to_json(model.initial_mean);
    j["initial_chol"] = mat_to_json(model.initial_chol);
    j["weight_mean"] = vec_to_json(model.weights.mean);
    j["weight_log_var"] = vec_to_json(model.weights.log_var);
    return j.dump(1);
}

ProDssmModel<double> model_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("model file: ") + e.what());
    }
    if (j.value("format", "") != kModelFormat) {
        throw ConfigError("model file: unsupported format tag");
    }
    try {
        ProDssmModel<double> m;
        m.scheme = parse_scheme(j.at("scheme").get<std::string>());
        m.f_spec = network_from_json(j.at("f"));
        const json& v = j.at("variance");
        const std::string kind = v.at("kind").get<std::string>();
        if (kind == "constant_diag") {
            m.variance.kind = VarianceKind::ConstantDiag;
            m.variance.log_var = vec_from_json(v.at("log_var"));
        } else if (kind == "log_var_net") {
            m.variance.kind = VarianceKind::LogVarNet;
            m.variance.net = network_from_json(v.at("net"));
            m.variance.log_var = Vec(0);
        } else {
            throw ConfigError("model file: unknown variance kind '" + kind + "'");
        }
        m.g_spec = network_from_json(j.at("g"));
        m.g_params = vec_from_json(j.at("g_params"));
        m.log_r = vec_from_json(j.at("log_r"));
        m.initial_mean = vec_from_json(j.at("initial_mean"));
        m.initial_chol = mat_from_json(j.at("initial_chol"));
        m.weights.mean = vec_from_json(j.at("weight_mean"));
        m.weights.log_var = vec_from_json(j.at("weight_log_var"));
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model file: ") + e.what());
    }
}

void save_model(const ProDssmModel<double>& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write model file " + path);
    out << model_to_json(model) << '\n';
}

ProDssmModel<double> load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read model file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return model_from_json(buffer.str());
}

bool models_equal(const ProDssmModel<double>& a, const ProDssmModel<double>& b) {
    return model_to_json(a) == model_to_json(b);
}

}  // namespace prodssm
