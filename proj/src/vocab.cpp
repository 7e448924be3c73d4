#include "langtraj/vocab.hpp"

#include <array>

namespace langtraj::annotate {

namespace {
constexpr std::array<const char*, kVocabSize> kNames = {
    "MoveFast", "MoveSlow", "Stop",     "TurnLeft", "TurnRight", "SpeedUp", "SlowDown",
    "LaneKeep", "LaneChangeLeft", "LaneChangeRight", "Follow",   "Yield",
    "Agent#1",  "Agent#2",  "Agent#3",  "Agent#4",  "<bos>",     "<eos>",   "<pad>"};
}

const char* token_name(Token t) {
  int i = static_cast<int>(t);
  if (i < 0 || i >= kVocabSize) throw InvalidInput("token id out of range");
  return kNames[i];
}

Token token_from_name(std::string_view name) {
  for (int i = 0; i < kVocabSize; ++i)
    if (name == kNames[i]) return static_cast<Token>(i);
  throw InvalidInput("unknown token name: " + std::string(name));
}

std::optional<Token> opposite_of(Token t) {
  switch (t) {
    case Token::TurnLeft: return Token::TurnRight;
    case Token::TurnRight: return Token::TurnLeft;
    case Token::SpeedUp: return Token::SlowDown;
    case Token::SlowDown: return Token::SpeedUp;
    case Token::LaneChangeLeft: return Token::LaneChangeRight;
    case Token::LaneChangeRight: return Token::LaneChangeLeft;
    default: return std::nullopt;
  }
}

std::vector<Token> Caption::content() const {
  std::vector<Token> out;
  for (Token t : tokens)
    if (is_content(t)) out.push_back(t);
  return out;
}

std::string Caption::to_string() const {
  std::string s;
  for (Token t : tokens) {
    if (!s.empty()) s += ' ';
    s += token_name(t);
  }
  return s;
}

void validate(const Caption& c, int max_tokens) {
  if (c.size() != max_tokens) throw InvalidInput("caption length must equal max_tokens");
  if (c.tokens.front() != Token::Bos) throw InvalidInput("caption must begin with <bos>");
  int eos_at = -1;
  for (int i = 1; i < c.size(); ++i) {
    Token t = c.tokens[i];
    if (t == Token::Bos) throw InvalidInput("<bos> may only appear at position 0");
    if (t == Token::Eos) {
      if (eos_at >= 0) throw InvalidInput("caption has multiple <eos>");
      eos_at = i;
    } else if (t == Token::Pad) {
      if (eos_at < 0) throw InvalidInput("<pad> before <eos>");
    } else {
      if (eos_at >= 0) throw InvalidInput("content token after <eos>");
      if (is_agent_ref(t) && !needs_agent_ref(c.tokens[i - 1]))
        throw InvalidInput("agent reference not preceded by Follow/Yield");
      if (needs_agent_ref(t) && (i + 1 >= c.size() || !is_agent_ref(c.tokens[i + 1])))
        throw InvalidInput(std::string(token_name(t)) + " missing its agent reference");
    }
  }
  if (eos_at < 0) throw InvalidInput("caption missing <eos>");
}

Caption make_caption(const std::vector<Token>& content, int max_tokens) {
  if (static_cast<int>(content.size()) > max_tokens - 2)
    throw InvalidInput("too many content tokens for caption length");
  Caption c;
  c.tokens.reserve(max_tokens);
  c.tokens.push_back(Token::Bos);
  for (Token t : content) {
    if (!is_content(t)) throw InvalidInput("make_caption: non-content token in content list");
    c.tokens.push_back(t);
  }
  c.tokens.push_back(Token::Eos);
  while (c.size() < max_tokens) c.tokens.push_back(Token::Pad);
  validate(c, max_tokens);
  return c;
}

}  // namespace langtraj::annotate
