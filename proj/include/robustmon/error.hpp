#ifndef ROBUSTMON_ERROR_HPP
#define ROBUSTMON_ERROR_HPP

#include <stdexcept>
#include <string>

namespace robustmon {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Simulation state became non-finite.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  long step;
};

struct ShapeError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

struct UnsupportedError : Error {
  using Error::Error;
};

/// Config schema violation; `path` is the JSON pointer of the offending field.
struct ConfigError : Error {
  ConfigError(const std::string& path, const std::string& msg)
      : Error(path + ": " + msg), path(path) {}
  std::string path;
};

/// An upstream pipeline artifact is absent; `stage` names the stage that produces it.
struct MissingArtifactError : Error {
  MissingArtifactError(const std::string& stage, const std::string& file)
      : Error("missing artifact " + file + " (run stage '" + stage + "' first)"),
        stage(stage) {}
  std::string stage;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace robustmon

#endif  // ROBUSTMON_ERROR_HPP
