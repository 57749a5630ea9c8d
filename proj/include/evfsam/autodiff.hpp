#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "evfsam/tensor.hpp"

namespace evfsam {

// Ordered record of executed differentiable operations. Ops append themselves
// to the tape that is active on the calling thread (see TapeScope), so the
// record order is a topological order of the computation by construction.
class Tape {
 public:
  struct Record {
    const char* op;
    std::vector<Tensor> inputs;
    Tensor output;
    // Reads output.grad() and accumulates into the inputs that require grad.
    std::function<void()> backward;
  };

  void push(Record record) { records_.push_back(std::move(record)); }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the chain rule in reverse record
  // order. Gradients accumulate (+=) into leaves. Returns the number of
  // records visited.
  std::size_t backward(Tensor loss);

 private:
  std::vector<Record> records_;
};

// Installs a tape as the active tape of this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Temporarily disables recording (inference / frozen sub-graphs).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Free-function form of Tape::backward.
std::size_t backward(const Tensor& loss, Tape& tape);

namespace detail {

// True when an op over `inputs` must be recorded on the active tape.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(const std::vector<Tensor>& inputs);

// Marks `output` as requiring grad and appends the record to the active tape.
void record(const char* op, std::vector<Tensor> inputs, Tensor& output,
            std::function<void()> backward);

}  // namespace detail

}  // namespace evfsam
