#ifndef PRODSSM_SERIALIZATION_HPP
#define PRODSSM_SERIALIZATION_HPP

#include <string>

#include "prodssm/model.hpp"

namespace prodssm {

inline constexpr const char* kModelFormat = "prodssm-model/1";

/// JSON text with every field of the model; doubles are written with
/// round-trip precision so `model_from_json(model_to_json(m)) == m` exactly.
std::string model_to_json(const ProDssmModel<double>& model);
ProDssmModel<double> model_from_json(const std::string& text);

void save_model(const ProDssmModel<double>& model, const std::string& path);
ProDssmModel<double> load_model(const std::string& path);

bool models_equal(const ProDssmModel<double>& a, const ProDssmModel<double>& b);

}  // namespace prodssm

#endif  // PRODSSM_SERIALIZATION_HPP
