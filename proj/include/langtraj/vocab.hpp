#pragma once

// Maneuver/interaction token vocabulary and caption container. Token ids are
// stable: serialized artifacts and checkpoints depend on this ordering.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "langtraj/common.hpp"

namespace langtraj::annotate {

enum class Token : int {
  MoveFast = 0,
  MoveSlow = 1,
  Stop = 2,
  TurnLeft = 3,
  TurnRight = 4,
  SpeedUp = 5,
  SlowDown = 6,
  LaneKeep = 7,
  LaneChangeLeft = 8,
  LaneChangeRight = 9,
  Follow = 10,
  Yield = 11,
  Agent1 = 12,
  Agent2 = 13,
  Agent3 = 14,
  Agent4 = 15,
  Bos = 16,
  Eos = 17,
  Pad = 18,
};

constexpr int kVocabSize = 19;
constexpr int kContentTokens = 16;
constexpr int kMaxAgentRef = 4;

const char* token_name(Token t);
Token token_from_name(std::string_view name);  // throws InvalidInput on unknown names

inline bool is_content(Token t) { return static_cast<int>(t) < kContentTokens; }
inline bool is_special(Token t) { return !is_content(t); }
inline bool is_agent_ref(Token t) { return t >= Token::Agent1 && t <= Token::Agent4; }
// Follow/Yield must be followed by an Agent#k reference in a caption.
inline bool needs_agent_ref(Token t) { return t == Token::Follow || t == Token::Yield; }
inline Token agent_token(int k) {
  if (k < 1 || k > kMaxAgentRef) throw InvalidInput("agent reference rank out of range");
  return static_cast<Token>(static_cast<int>(Token::Agent1) + k - 1);
}

// Opposite-meaning pairs used by the oscillation rejection rule.
std::optional<Token> opposite_of(Token t);

// One time span during which a token applies. Steps index the annotated
// trajectory (past and future concatenated); end is inclusive.
struct TokenInterval {
  Token token = Token::Pad;
  int start = 0;
  int end = 0;
  int agent_ref = 0;  // neighbor rank for Follow/Yield, 0 otherwise

  int length() const { return end - start + 1; }
};

// Fixed-length token sequence: <bos>, content tokens in temporal order,
// <eos>, then <pad> up to max_tokens.
struct Caption {
  std::vector<Token> tokens;

  int size() const { return static_cast<int>(tokens.size()); }
  std::vector<Token> content() const;  // content tokens only, in order
  std::string to_string() const;       // space-separated names, specials included
};

// Throws InvalidInput when the caption breaks the structural rules
// (bos/eos/pad layout, agent refs preceded by Follow/Yield, length M).
void validate(const Caption& c, int max_tokens);

Caption make_caption(const std::vector<Token>& content, int max_tokens);

}  // namespace langtraj::annotate
