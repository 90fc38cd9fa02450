#include "prodssm/autodiff.hpp"

#include <stdexcept>

namespace prodssm::ad {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape* active_tape() { return g_active; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }

TapeScope::~TapeScope() { g_active = previous_; }

std::uint32_t Tape::push(std::uint32_t p0, double d0, std::uint32_t p1, double d1) {
    if (nodes_.size() >= kConstant) throw std::length_error("autodiff tape exhausted");
    nodes_.push_back({d0, d1, p0, p1});
    return static_cast<std::uint32_t>(nodes_.size() - 1);
}

Var Var::independent(double value) {
    Tape* tape = active_tape();
    if (tape == nullptr) throw std::logic_error("Var::independent requires an active tape");
    Var v(value);
    v.index_ = tape->push(kConstant, 0.0, kConstant, 0.0);
    return v;
}

std::vector<double> Tape::adjoints(const Var& output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output.is_constant()) return adj;
    adj[output.index()] = 1.0;
    for (std::size_t k = output.index() + 1; k-- > 0;) {
        const double a = adj[k];
        if (a == 0.0) continue;
        const Node& n = nodes_[k];
        if (n.p0 != kConstant) adj[n.p0] += n.d0 * a;
        if (n.p1 != kConstant) adj[n.p1] += n.d1 * a;
    }
    return adj;
}

}  // namespace prodssm::ad
