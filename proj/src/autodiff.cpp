#include "evfsam/autodiff.hpp"

#include "evfsam/errors.hpp"

namespace evfsam {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape* active_tape() { return g_active; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

NoGradScope::NoGradScope() : previous_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = previous_; }

std::size_t Tape::backward(Tensor loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return 0;
  loss.ensure_grad()[0] += Scalar{1};
  std::size_t visited = 0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // not reachable from the loss
    it->backward();
    ++visited;
  }
  return visited;
}

std::size_t backward(const Tensor& loss, Tape& tape) { return tape.backward(loss); }

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

bool should_record(const std::vector<Tensor>& inputs) {
  if (g_active == nullptr) return false;
  for (const auto& t : inputs)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

void record(const char* op, std::vector<Tensor> inputs, Tensor& output,
            std::function<void()> backward) {
  Tape* tape = g_active;
  if (tape == nullptr) return;
  output.mark_intermediate();
  tape->push({op, std::move(inputs), output, std::move(backward)});
}

}  // namespace detail

}  // namespace evfsam
