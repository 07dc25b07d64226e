#pragma once

// In-memory mock filesystem used while grading IO exercises: a recursive
// directory tree, a handle table, injectable faults and an operation log
// that supports post-run inspection and replay.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

namespace miniml {

struct Node;

struct FileNode { std::string content; };
struct DirNode { std::map<std::string, Node> children; };

struct Node {
  std::variant<FileNode, DirNode> v;
  bool is_file() const { return std::holds_alternative<FileNode>(v); }
  bool is_dir() const { return std::holds_alternative<DirNode>(v); }
  FileNode& file() { return std::get<FileNode>(v); }
  const FileNode& file() const { return std::get<FileNode>(v); }
  DirNode& dir() { return std::get<DirNode>(v); }
  const DirNode& dir() const { return std::get<DirNode>(v); }
  static Node make_dir() { return Node{DirNode{}}; }
  static Node make_file(std::string content) {
    return Node{FileNode{std::move(content)}};
  }
};

enum class OpenMode { Read, Write };
enum class VfsOp { Open, ReadOp, WriteOp, Close };

struct Handle {
  int id = 0;
  std::string path;
  OpenMode mode = OpenMode::Read;
  std::size_t position = 0;
  bool open = true;
};

struct FaultRule {
  std::string path;
  VfsOp op = VfsOp::Open;
  int countdown = 1;  // fires on the countdown-th matching operation
  std::string message;
  bool fired = false;
};

enum class VfsErrorKind {
  NotFound, IsDirectory, AlreadyWriteOpen, ClosedHandle, WrongMode,
  EndOfFile, InjectedFault, BadPath,
};

struct VfsError {
  VfsErrorKind kind;
  std::string message;
};

struct LogEntry {
  VfsOp op;
  std::string path;
  int handle = -1;
  std::int64_t step = 0;
  OpenMode mode = OpenMode::Read;  // Open entries only
  std::string data;                // Write entries: bytes written
};

struct InspectionReport {
  std::vector<std::string> created;
  std::vector<std::string> modified;
  std::vector<std::string> deleted;
  std::vector<std::pair<int, std::string>> open_handles;
  std::vector<LogEntry> op_log;
};

class VfsState {
 public:
  VfsState() : root_(Node::make_dir()), snapshot_(Node::make_dir()) {}

  // Fresh state seeded from an initial tree; the snapshot is a deep copy.
  static VfsState reset(const Node& initial) {
    VfsState s;
    s.root_ = initial;       // Node has value semantics, this is a deep copy
    s.snapshot_ = initial;
    return s;
  }

  void add_fault(FaultRule rule) { faults_.push_back(std::move(rule)); }

  int open(const std::string& path, OpenMode mode, std::int64_t step = -1) {
    validate_path(path);
    consult_faults(path, VfsOp::Open);
    if (mode == OpenMode::Read) {
      const Node* n = find(path);
      if (!n) throw VfsError{VfsErrorKind::NotFound, path + ": no such file"};
      if (n->is_dir())
        throw VfsError{VfsErrorKind::IsDirectory, path + ": is a directory"};
    } else {
      for (auto& [id, h] : handles_)
        if (h.open && h.mode == OpenMode::Write && h.path == path)
          throw VfsError{VfsErrorKind::AlreadyWriteOpen,
                         path + ": already open for writing"};
      Node* n = find_mut(path);
      if (n) {
        if (n->is_dir())
          throw VfsError{VfsErrorKind::IsDirectory, path + ": is a directory"};
        n->file().content.clear();  // truncate
      } else {
        auto [parent, base] = split_path(path);
        Node* pn = find_mut(parent);
        if (!pn || !pn->is_dir())
          throw VfsError{VfsErrorKind::NotFound,
                         parent + ": no such directory"};
        pn->dir().children.emplace(base, Node::make_file(""));
      }
    }
    int id = next_id_++;
    handles_[id] = Handle{id, path, mode, 0, true};
    log_.push_back(LogEntry{VfsOp::Open, path, id, bump(step), mode, ""});
    return id;
  }

  std::string read_line(int id, std::int64_t step = -1) {
    Handle& h = live_handle(id);
    consult_faults(h.path, VfsOp::ReadOp);
    if (h.mode != OpenMode::Read)
      throw VfsError{VfsErrorKind::WrongMode, h.path + ": not open for reading"};
    const Node* n = find(h.path);
    const std::string& content =
        n && n->is_file() ? n->file().content : empty_;
    if (h.position >= content.size())
      throw VfsError{VfsErrorKind::EndOfFile, h.path + ": end of file"};
    std::size_t nl = content.find('\n', h.position);
    std::string line;
    if (nl == std::string::npos) {
      line = content.substr(h.position);
      h.position = content.size();
    } else {
      line = content.substr(h.position, nl - h.position);
      h.position = nl + 1;
    }
    log_.push_back(
        LogEntry{VfsOp::ReadOp, h.path, id, bump(step), OpenMode::Read, ""});
    return line;
  }

  void write(int id, const std::string& bytes, std::int64_t step = -1) {
    Handle& h = live_handle(id);
    consult_faults(h.path, VfsOp::WriteOp);
    if (h.mode != OpenMode::Write)
      throw VfsError{VfsErrorKind::WrongMode, h.path + ": not open for writing"};
    Node* n = find_mut(h.path);
    if (!n || !n->is_file())
      throw VfsError{VfsErrorKind::NotFound, h.path + ": no such file"};
    n->file().content.insert(h.position, bytes);
    h.position += bytes.size();
    log_.push_back(LogEntry{VfsOp::WriteOp, h.path, id, bump(step),
                            OpenMode::Write, bytes});
  }

  void close(int id, std::int64_t step = -1) {
    auto it = handles_.find(id);
    if (it == handles_.end() || !it->second.open)
      throw VfsError{VfsErrorKind::ClosedHandle, "handle already closed"};
    consult_faults(it->second.path, VfsOp::Close);
    it->second.open = false;
    log_.push_back(LogEntry{VfsOp::Close, it->second.path, id, bump(step),
                            OpenMode::Read, ""});
  }

  InspectionReport inspect() const {
    InspectionReport r;
    std::map<std::string, const Node*> before, after;
    index_tree("", snapshot_, before);
    index_tree("", root_, after);
    for (auto& [path, node] : after) {
      auto it = before.find(path);
      if (it == before.end()) r.created.push_back(path);
      else if (node->is_file() != it->second->is_file() ||
               (node->is_file() &&
                node->file().content != it->second->file().content))
        r.modified.push_back(path);
    }
    for (auto& [path, node] : before)
      if (!after.count(path)) r.deleted.push_back(path);
    for (auto& [id, h] : handles_)
      if (h.open) r.open_handles.emplace_back(id, h.path);
    r.op_log = log_;
    return r;
  }

  const Node& root() const { return root_; }
  const Node& snapshot() const { return snapshot_; }
  const std::vector<LogEntry>& log() const { return log_; }
  const Node* find(const std::string& path) const {
    return const_cast<VfsState*>(this)->find_mut(path);
  }

  // Replays an operation log against an initial tree. Open-for-write
  // truncates or creates, writes append; reads and closes do not mutate.
  static Node replay(const Node& initial, const std::vector<LogEntry>& log) {
    VfsState s = VfsState::reset(initial);
    for (const LogEntry& e : log) {
      switch (e.op) {
        case VfsOp::Open:
          if (e.mode == OpenMode::Write) {
            Node* n = s.find_mut(e.path);
            if (n && n->is_file()) n->file().content.clear();
            else if (!n) {
              auto [parent, base] = split_path(e.path);
              Node* pn = s.find_mut(parent);
              if (pn && pn->is_dir())
                pn->dir().children.emplace(base, Node::make_file(""));
            }
          }
          break;
        case VfsOp::WriteOp: {
          Node* n = s.find_mut(e.path);
          if (n && n->is_file()) n->file().content += e.data;
          break;
        }
        case VfsOp::ReadOp:
        case VfsOp::Close:
          break;
      }
    }
    return s.root_;
  }

 private:
  Node root_;
  Node snapshot_;
  std::map<int, Handle> handles_;
  int next_id_ = 1;
  std::vector<FaultRule> faults_;
  std::vector<LogEntry> log_;
  std::int64_t op_counter_ = 0;
  inline static const std::string empty_;

  std::int64_t bump(std::int64_t step) {
    return step >= 0 ? step : op_counter_++;
  }

  Handle& live_handle(int id) {
    auto it = handles_.find(id);
    if (it == handles_.end() || !it->second.open)
      throw VfsError{VfsErrorKind::ClosedHandle, "handle is not open"};
    return it->second;
  }

  void consult_faults(const std::string& path, VfsOp op) {
    for (FaultRule& f : faults_) {
      if (f.fired || f.op != op || f.path != path) continue;
      if (--f.countdown <= 0) {
        f.fired = true;
        throw VfsError{VfsErrorKind::InjectedFault, f.message};
      }
    }
  }

  static void validate_path(const std::string& path) {
    if (path.empty() || path[0] != '/')
      throw VfsError{VfsErrorKind::BadPath, path + ": path must be absolute"};
    std::size_t i = 1;
    while (i <= path.size()) {
      std::size_t j = path.find('/', i);
      if (j == std::string::npos) j = path.size();
      std::string comp = path.substr(i, j - i);
      if (comp.empty() || comp == "." || comp == "..")
        throw VfsError{VfsErrorKind::BadPath, path + ": path not normalized"};
      i = j + 1;
    }
  }

  static std::pair<std::string, std::string> split_path(const std::string& path) {
    std::size_t slash = path.rfind('/');
    std::string parent = slash == 0 ? "/" : path.substr(0, slash);
    return {parent, path.substr(slash + 1)};
  }

  Node* find_mut(const std::string& path) {
    Node* cur = &root_;
    if (path == "/") return cur;
    std::size_t i = 1;
    while (i <= path.size()) {
      std::size_t j = path.find('/', i);
      if (j == std::string::npos) j = path.size();
      std::string comp = path.substr(i, j - i);
      if (!cur->is_dir()) return nullptr;
      auto it = cur->dir().children.find(comp);
      if (it == cur->dir().children.end()) return nullptr;
      cur = &it->second;
      i = j + 1;
    }
    return cur;
  }

  static void index_tree(const std::string& prefix, const Node& n,
                         std::map<std::string, const Node*>& out) {
    if (n.is_dir()) {
      for (auto& [name, child] : n.dir().children) {
        std::string path = prefix + "/" + name;
        out[path] = &child;
        index_tree(path, child, out);
      }
    }
  }
};

inline bool tree_equal(const Node& a, const Node& b) {
  if (a.is_file() != b.is_file()) return false;
  if (a.is_file()) return a.file().content == b.file().content;
  const auto& ca = a.dir().children;
  const auto& cb = b.dir().children;
  if (ca.size() != cb.size()) return false;
  auto ia = ca.begin();
  auto ib = cb.begin();
  for (; ia != ca.end(); ++ia, ++ib)
    if (ia->first != ib->first || !tree_equal(ia->second, ib->second))
      return false;
  return true;
}

// JSON tree schema: {"dirs":{name: tree}, "files":{name: contents}}
inline Node tree_from_json(const nlohmann::json& j) {
  Node n = Node::make_dir();
  if (j.contains("files"))
    for (auto& [name, content] : j.at("files").items())
      n.dir().children.emplace(name,
                               Node::make_file(content.get<std::string>()));
  if (j.contains("dirs"))
    for (auto& [name, sub] : j.at("dirs").items())
      n.dir().children.emplace(name, tree_from_json(sub));
  return n;
}

inline nlohmann::json tree_to_json(const Node& n) {
  nlohmann::json dirs = nlohmann::json::object();
  nlohmann::json files = nlohmann::json::object();
  for (auto& [name, child] : n.dir().children) {
    if (child.is_file()) files[name] = child.file().content;
    else dirs[name] = tree_to_json(child);
  }
  return nlohmann::json{{"dirs", dirs}, {"files", files}};
}

}  // namespace miniml
