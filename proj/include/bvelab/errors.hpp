#pragma once

#include <stdexcept>
#include <string>

namespace bvelab {

// Base of every error raised by the library. Subclasses name the failure
// so callers can catch exactly what they expect.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BVELAB_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

// envs
BVELAB_DEFINE_ERROR(ActionOutOfRange);
BVELAB_DEFINE_ERROR(SteppedTerminalEnv);
// datastore
BVELAB_DEFINE_ERROR(EmptyEpisode);
BVELAB_DEFINE_ERROR(IoError);
BVELAB_DEFINE_ERROR(FormatVersionMismatch);
BVELAB_DEFINE_ERROR(ChecksumMismatch);
BVELAB_DEFINE_ERROR(CorruptDataset);
// neuralnet
BVELAB_DEFINE_ERROR(ShapeMismatch);
BVELAB_DEFINE_ERROR(NonFiniteGradient);
BVELAB_DEFINE_ERROR(DivergenceDetected);
// agents
BVELAB_DEFINE_ERROR(EmptyEffectiveBatch);
BVELAB_DEFINE_ERROR(WindowNotContiguous);
// tabular
BVELAB_DEFINE_ERROR(SingularSystem);
BVELAB_DEFINE_ERROR(NonConvergence);
BVELAB_DEFINE_ERROR(StructureViolation);
// divergence
BVELAB_DEFINE_ERROR(ArchitectureMismatch);
// evaluation
BVELAB_DEFINE_ERROR(DegenerateReference);
// cli / experiment configuration
BVELAB_DEFINE_ERROR(ConfigError);

#undef BVELAB_DEFINE_ERROR

}  // namespace bvelab
