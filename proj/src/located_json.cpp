#include "circuitcheck/located_json.hpp"

#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

#include "circuitcheck/error.hpp"

namespace circuitcheck {

namespace {

using nlohmann::json;

// Input iterator that tracks the line of the next character handed to the lexer.
class LineCountingIterator {
 public:
  using iterator_category = std::input_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  LineCountingIterator() = default;
  LineCountingIterator(const char* p, std::size_t* line) : p_(p), line_(line) {}

  reference operator*() const { return *p_; }
  LineCountingIterator& operator++() {
    if (*p_ == '\n' && line_ != nullptr) ++*line_;
    ++p_;
    return *this;
  }
  LineCountingIterator operator++(int) {
    auto old = *this;
    ++*this;
    return old;
  }
  friend bool operator==(const LineCountingIterator& a, const LineCountingIterator& b) { return a.p_ == b.p_; }
  friend bool operator!=(const LineCountingIterator& a, const LineCountingIterator& b) { return a.p_ != b.p_; }

 private:
  const char* p_ = nullptr;
  std::size_t* line_ = nullptr;
};

std::string escape_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') {
      out += "~0";
    } else if (c == '/') {
      out += "~1";
    } else {
      out += c;
    }
  }
  return out;
}

class LocatingSax {
 public:
  LocatingSax(LocatedJson& out, const std::size_t& line) : out_(out), line_(line) {}

  bool null() { return put(json(nullptr)); }
  bool boolean(bool v) { return put(json(v)); }
  bool number_integer(json::number_integer_t v) { return put(json(v)); }
  bool number_unsigned(json::number_unsigned_t v) { return put(json(v)); }
  bool number_float(json::number_float_t v, const std::string&) { return put(json(v)); }
  bool string(json::string_t& v) { return put(json(v)); }
  bool binary(json::binary_t& v) { return put(json(v)); }

  bool start_object(std::size_t) {
    open(json::object());
    return true;
  }
  bool key(json::string_t& k) {
    pending_key_ = k;
    return true;
  }
  bool end_object() {
    close();
    return true;
  }
  bool start_array(std::size_t) {
    open(json::array());
    return true;
  }
  bool end_array() {
    close();
    return true;
  }

  bool parse_error(std::size_t position, const std::string&, const nlohmann::detail::exception& ex) {
    error_position_ = position;
    error_message_ = ex.what();
    return false;
  }

  std::size_t error_position() const { return error_position_; }
  const std::string& error_message() const { return error_message_; }

 private:
  struct Frame {
    json value;
    std::string pointer;
    std::string key;  // member name in the parent object
  };

  std::string child_pointer() const {
    if (stack_.empty()) return "";
    const Frame& top = stack_.back();
    if (top.value.is_object()) return top.pointer + "/" + escape_token(pending_key_);
    return top.pointer + "/" + std::to_string(top.value.size());
  }

  void attach(json value, const std::string& key) {
    if (stack_.empty()) {
      out_.value = std::move(value);
      return;
    }
    json& parent = stack_.back().value;
    if (parent.is_object()) {
      parent[key] = std::move(value);
    } else {
      parent.push_back(std::move(value));
    }
  }

  bool put(json value) {
    out_.lines.emplace(child_pointer(), line_);
    attach(std::move(value), pending_key_);
    return true;
  }

  void open(json container) {
    std::string pointer = child_pointer();
    out_.lines.emplace(pointer, line_);
    stack_.push_back({std::move(container), std::move(pointer), pending_key_});
  }

  void close() {
    Frame done = std::move(stack_.back());
    stack_.pop_back();
    attach(std::move(done.value), done.key);
  }

  LocatedJson& out_;
  const std::size_t& line_;
  std::vector<Frame> stack_;
  std::string pending_key_;
  std::size_t error_position_ = 0;
  std::string error_message_;
};

std::size_t line_at_offset(std::string_view text, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

}  // namespace

std::size_t LocatedJson::line_of(const std::string& pointer) const {
  auto it = lines.find(pointer);
  return it == lines.end() ? 0 : it->second;
}

LocatedJson parse_located_json(std::string_view text) {
  LocatedJson out;
  std::size_t line = 1;
  LocatingSax sax(out, line);
  LineCountingIterator first(text.data(), &line);
  LineCountingIterator last(text.data() + text.size(), nullptr);
  const bool ok = json::sax_parse(first, last, &sax);
  if (!ok) {
    // nlohmann positions are one past the offending character.
    const std::size_t pos = sax.error_position() > 0 ? sax.error_position() - 1 : 0;
    throw ParseError("malformed JSON: " + sax.error_message(), line_at_offset(text, pos));
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace circuitcheck
