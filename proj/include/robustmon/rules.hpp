#ifndef ROBUSTMON_RULES_HPP
#define ROBUSTMON_RULES_HPP

// Context-dependent safety rules for insulin control actions, the rule-based
// monitor built on them, and the window aggregation feeding both.
//
// Rules are data. A guard is a conjunction of comparisons in this grammar:
//
//   guard   := atom ( "&&" atom )*
//   atom    := var op value
//   var     := "BG" | "BG'" | "IOB" | "IOB'" | "u"
//   op      := ">" | "<" | ">=" | "<=" | "==" | "=" | "!="
//   value   := number | "BGT" | "u1" | "u2" | "u3" | "u4"
//
// BG' and IOB' are compared after a dead-band: slopes with magnitude below
// the configured band count as exactly 0.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmon/error.hpp"
#include "robustmon/util.hpp"
#include "robustmon/verdict.hpp"

namespace robustmon::rules {

enum class ControlAction { decrease_insulin = 1, increase_insulin = 2, stop_insulin = 3, keep_insulin = 4 };

inline const char* to_string(ControlAction a) {
  switch (a) {
    case ControlAction::decrease_insulin: return "u1";
    case ControlAction::increase_insulin: return "u2";
    case ControlAction::stop_insulin: return "u3";
    case ControlAction::keep_insulin: return "u4";
  }
  return "?";
}

inline constexpr int action_index(ControlAction a) { return static_cast<int>(a) - 1; }

enum class HazardType { none = 0, H1 = 1, H2 = 2 };

struct SafetyContext {
  double bg = 0.0;         // mg/dL
  double bg_prime = 0.0;   // mg/dL per step
  double iob = 0.0;        // U
  double iob_prime = 0.0;  // U per step
  double bgt = 120.0;      // mg/dL
  ControlAction action = ControlAction::keep_insulin;

  bool finite() const {
    return std::isfinite(bg) && std::isfinite(bg_prime) && std::isfinite(iob) &&
           std::isfinite(iob_prime) && std::isfinite(bgt);
  }
};

struct RuleParams {
  double bg_slope_deadband = 0.1;    // mg/dL per step
  double iob_slope_deadband = 0.01;  // U per step
  double action_deadband = 0.05;     // relative change in rate
};

// ---------------------------------------------------------------------------
// Guard expressions

enum class Var { bg, bg_prime, iob, iob_prime, action };
enum class CmpOp { gt, lt, ge, le, eq, ne };

struct Atom {
  Var var = Var::bg;
  CmpOp op = CmpOp::gt;
  bool rhs_is_bgt = false;
  double rhs = 0.0;  // numeric value, or action code 1..4 when var == action
};

struct Guard {
  std::vector<Atom> atoms;
  std::string source;
};

namespace detail {

inline bool compare(double lhs, CmpOp op, double rhs) {
  switch (op) {
    case CmpOp::gt: return lhs > rhs;
    case CmpOp::lt: return lhs < rhs;
    case CmpOp::ge: return lhs >= rhs;
    case CmpOp::le: return lhs <= rhs;
    case CmpOp::eq: return lhs == rhs;
    case CmpOp::ne: return lhs != rhs;
  }
  return false;
}

inline double deadband(double v, double band) { return std::abs(v) < band ? 0.0 : v; }

class GuardLexer {
 public:
  explicit GuardLexer(std::string_view s) : s_(s) {}

  std::optional<std::string> next() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (pos_ >= s_.size()) return std::nullopt;
    const char c = s_[pos_];
    if (c == '&') {
      if (pos_ + 1 < s_.size() && s_[pos_ + 1] == '&') {
        pos_ += 2;
        return "&&";
      }
      throw InvalidArgument("guard: expected '&&' in '" + std::string(s_) + "'");
    }
    if (c == '<' || c == '>' || c == '=' || c == '!') {
      std::string op(1, c);
      ++pos_;
      if (pos_ < s_.size() && s_[pos_] == '=') {
        op += '=';
        ++pos_;
      }
      return op;
    }
    std::size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
            s_[pos_] == '\'' || s_[pos_] == '_' || s_[pos_] == '-' || s_[pos_] == '+')) {
      ++pos_;
    }
    if (start == pos_) {
      throw InvalidArgument("guard: unexpected character '" + std::string(1, c) + "'");
    }
    return std::string(s_.substr(start, pos_ - start));
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

inline Var parse_var(const std::string& t) {
  if (t == "BG") return Var::bg;
  if (t == "BG'") return Var::bg_prime;
  if (t == "IOB") return Var::iob;
  if (t == "IOB'") return Var::iob_prime;
  if (t == "u") return Var::action;
  throw InvalidArgument("guard: unknown variable '" + t + "'");
}

inline CmpOp parse_op(const std::string& t) {
  if (t == ">") return CmpOp::gt;
  if (t == "<") return CmpOp::lt;
  if (t == ">=") return CmpOp::ge;
  if (t == "<=") return CmpOp::le;
  if (t == "==" || t == "=") return CmpOp::eq;
  if (t == "!=") return CmpOp::ne;
  throw InvalidArgument("guard: unknown operator '" + t + "'");
}

}  // namespace detail

inline Guard parse_guard(const std::string& text) {
  detail::GuardLexer lex(text);
  Guard g;
  g.source = text;
  while (true) {
    auto var = lex.next();
    auto op = lex.next();
    auto val = lex.next();
    if (!var || !op || !val) throw InvalidArgument("guard: truncated atom in '" + text + "'");
    Atom a;
    a.var = detail::parse_var(*var);
    a.op = detail::parse_op(*op);
    if (a.var == Var::action) {
      if (a.op != CmpOp::eq && a.op != CmpOp::ne) {
        throw InvalidArgument("guard: actions only support == and !=");
      }
      if (val->size() != 2 || (*val)[0] != 'u' || (*val)[1] < '1' || (*val)[1] > '4') {
        throw InvalidArgument("guard: expected u1..u4, got '" + *val + "'");
      }
      a.rhs = (*val)[1] - '0';
    } else if (*val == "BGT") {
      a.rhs_is_bgt = true;
    } else {
      a.rhs = parse_double(*val);
    }
    g.atoms.push_back(a);
    auto sep = lex.next();
    if (!sep) break;
    if (*sep != "&&") throw InvalidArgument("guard: expected '&&', got '" + *sep + "'");
  }
  return g;
}

inline bool eval_guard(const Guard& g, const SafetyContext& ctx, const RuleParams& prm) {
  for (const auto& a : g.atoms) {
    double lhs = 0.0;
    switch (a.var) {
      case Var::bg: lhs = ctx.bg; break;
      case Var::bg_prime: lhs = detail::deadband(ctx.bg_prime, prm.bg_slope_deadband); break;
      case Var::iob: lhs = ctx.iob; break;
      case Var::iob_prime: lhs = detail::deadband(ctx.iob_prime, prm.iob_slope_deadband); break;
      case Var::action: lhs = static_cast<double>(static_cast<int>(ctx.action)); break;
    }
    const double rhs = a.rhs_is_bgt ? ctx.bgt : a.rhs;
    if (!detail::compare(lhs, a.op, rhs)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Rule table

struct SafetyRule {
  int id = 0;
  Guard guard;
  HazardType hazard = HazardType::none;
};

struct RuleVerdict {
  std::vector<int> fired_rule_ids;  // ascending
  HazardType hazard = HazardType::none;
  bool unsafe = false;
};

class RuleSet {
 public:
  RuleSet() = default;
  RuleSet(std::vector<SafetyRule> rules, RuleParams params = {}) : params_(params) {
    for (auto& r : rules) add(std::move(r));
  }

  void add(SafetyRule r) {
    if (r.hazard == HazardType::none) {
      throw InvalidArgument("rule " + std::to_string(r.id) + " has no hazard");
    }
    for (const auto& x : rules_) {
      if (x.id == r.id) throw InvalidArgument("duplicate rule id " + std::to_string(r.id));
    }
    auto pos = std::lower_bound(rules_.begin(), rules_.end(), r.id,
                                [](const SafetyRule& a, int id) { return a.id < id; });
    rules_.insert(pos, std::move(r));
  }

  const std::vector<SafetyRule>& rules() const { return rules_; }
  const RuleParams& params() const { return params_; }
  RuleParams& params() { return params_; }

  RuleVerdict evaluate(const SafetyContext& ctx) const {
    if (!ctx.finite()) throw InvalidArgument("safety context is not finite");
    RuleVerdict v;
    for (const auto& r : rules_) {
      if (eval_guard(r.guard, ctx, params_)) {
        if (v.fired_rule_ids.empty()) v.hazard = r.hazard;
        v.fired_rule_ids.push_back(r.id);
      }
    }
    v.unsafe = !v.fired_rule_ids.empty();
    return v;
  }

 private:
  std::vector<SafetyRule> rules_;
  RuleParams params_;
};

/// The twelve APS context rules.
inline RuleSet aps_rules(RuleParams params = {}) {
  struct Row {
    int id;
    const char* guard;
    HazardType hazard;
  };
  static const Row rows[] = {
      {1, "BG > BGT && BG' > 0 && IOB' < 0 && u == u1", HazardType::H2},
      {2, "BG > BGT && BG' > 0 && IOB' == 0 && u == u1", HazardType::H2},
      {3, "BG > BGT && BG' < 0 && IOB' > 0 && u == u1", HazardType::H2},
      {4, "BG > BGT && BG' < 0 && IOB' < 0 && u == u1", HazardType::H2},
      {5, "BG > BGT && BG' < 0 && IOB' == 0 && u == u1", HazardType::H2},
      {6, "BG < BGT && BG' < 0 && IOB' > 0 && u == u2", HazardType::H1},
      {7, "BG < BGT && BG' < 0 && IOB' < 0 && u == u2", HazardType::H1},
      {8, "BG < BGT && BG' < 0 && IOB' == 0 && u == u2", HazardType::H1},
      {9, "BG > BGT && u == u3", HazardType::H2},
      {10, "BG < 70 && u != u3", HazardType::H1},
      {11, "BG > BGT && BG' > 0 && IOB' <= 0 && u == u4", HazardType::H2},
      {12, "BG < BGT && BG' < 0 && IOB' >= 0 && u == u4", HazardType::H1},
  };
  std::vector<SafetyRule> rules;
  for (const auto& r : rows) rules.push_back({r.id, parse_guard(r.guard), r.hazard});
  return RuleSet(std::move(rules), params);
}

inline nlohmann::json to_json(const RuleSet& rs) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : rs.rules()) {
    rules.push_back({{"id", r.id},
                     {"guard", r.guard.source},
                     {"hazard", r.hazard == HazardType::H1 ? "H1" : "H2"}});
  }
  return {{"params",
           {{"bg_slope_deadband", rs.params().bg_slope_deadband},
            {"iob_slope_deadband", rs.params().iob_slope_deadband},
            {"action_deadband", rs.params().action_deadband}}},
          {"rules", rules}};
}

inline RuleSet rule_set_from_json(const nlohmann::json& j) {
  RuleParams p;
  if (j.contains("params")) {
    const auto& jp = j.at("params");
    p.bg_slope_deadband = jp.value("bg_slope_deadband", p.bg_slope_deadband);
    p.iob_slope_deadband = jp.value("iob_slope_deadband", p.iob_slope_deadband);
    p.action_deadband = jp.value("action_deadband", p.action_deadband);
  }
  RuleSet rs({}, p);
  for (const auto& jr : j.at("rules")) {
    const auto h = jr.at("hazard").get<std::string>();
    if (h != "H1" && h != "H2") throw InvalidArgument("rule hazard must be H1 or H2");
    rs.add({jr.at("id").get<int>(), parse_guard(jr.at("guard").get<std::string>()),
            h == "H1" ? HazardType::H1 : HazardType::H2});
  }
  return rs;
}

// ---------------------------------------------------------------------------
// Aggregation and the rule-based monitor

/// Maps consecutive pump rates (U/h) to a discrete action with a relative dead-band.
inline ControlAction discretize(double rate_t, double rate_prev, double rho = 0.05) {
  if (rate_t == 0.0) return ControlAction::stop_insulin;
  if (rate_t > rate_prev * (1.0 + rho)) return ControlAction::increase_insulin;
  if (rate_t < rate_prev * (1.0 - rho)) return ControlAction::decrease_insulin;
  return ControlAction::keep_insulin;
}

/// Least-squares slope of `y` against its index (per-step units).
inline double ls_slope(std::span<const double> y) {
  const auto n = static_cast<double>(y.size());
  const double x_mean = (n - 1.0) / 2.0;
  double y_mean = 0.0;
  for (double v : y) y_mean += v;
  y_mean /= n;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double dx = static_cast<double>(i) - x_mean;
    num += dx * (y[i] - y_mean);
    den += dx * dx;
  }
  return num / den;
}

inline double mean(std::span<const double> y) {
  double s = 0.0;
  for (double v : y) s += v;
  return s / static_cast<double>(y.size());
}

/// Un-normalized monitor window: sensed BG, IOB and delivered pump rate per step.
struct RawWindow {
  std::span<const double> bg;
  std::span<const double> iob;
  std::span<const double> rate;
};

inline SafetyContext aggregate_context(const RawWindow& w, double bgt, double rho = 0.05) {
  if (w.bg.size() < 2) throw InvalidArgument("aggregation window must span >= 2 steps");
  if (w.iob.size() != w.bg.size() || w.rate.size() != w.bg.size()) {
    throw ShapeError("aggregation window channels differ in length");
  }
  SafetyContext c;
  c.bg = mean(w.bg);
  c.bg_prime = ls_slope(w.bg);
  c.iob = mean(w.iob);
  c.iob_prime = ls_slope(w.iob);
  c.bgt = bgt;
  const auto n = w.rate.size();
  c.action = discretize(w.rate[n - 1], w.rate[n - 2], rho);
  return c;
}

inline int indicator(const RuleSet& rs, const SafetyContext& ctx) {
  return rs.evaluate(ctx).unsafe ? 1 : 0;
}

inline MonitorVerdict rule_monitor(const RuleSet& rs, const RawWindow& w, double bgt) {
  const auto ctx = aggregate_context(w, bgt, rs.params().action_deadband);
  return MonitorVerdict::from_probability(rs.evaluate(ctx).unsafe ? 1.0 : 0.0);
}

}  // namespace robustmon::rules

#endif  // ROBUSTMON_RULES_HPP
