#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "partloc/dataset/training_data.hpp"

namespace partloc::service {

using Json = nlohmann::ordered_json;

/// Carries the HTTP status a handler failure maps to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

enum class JobStatus { queued, running, snapshotting, done, failed };
std::string to_string(JobStatus status);
/// queued < running = snapshotting < done = failed; transitions never lower it.
int status_rank(JobStatus status);

struct TrainingJob {
  std::string id;
  std::string project;
  dataset::SplitSpec split;
  JobStatus status = JobStatus::queued;
  std::int64_t step = 0;
  std::int64_t total_steps = 0;
  std::optional<double> loss;
  std::string snapshot;  // latest snapshot path, empty before the first
  bool cancel_requested = false;
  bool cancelled = false;
  std::string error;
};

Json job_to_json(const TrainingJob& job);

struct TrainRequest {
  std::int64_t steps = 0;              // 0 means the project value
  std::int64_t snapshot_interval = 0;  // 0 means the project value
  std::optional<std::uint64_t> seed;   // default: project seed
  std::optional<double> train_fraction;
  std::optional<std::uint64_t> split_seed;
  std::string scorer;  // empty means the project scorer
};

/// Projects are the subdirectories of `root` holding a project.yaml. Frame
/// ids are "<project>/<image path relative to the project>". Label state is
/// read from and written to the label files on every request.
class ProjectService {
 public:
  explicit ProjectService(std::filesystem::path root);
  ~ProjectService();
  ProjectService(const ProjectService&) = delete;
  ProjectService& operator=(const ProjectService&) = delete;

  const std::filesystem::path& root() const { return root_; }

  Json list_projects() const;
  Json create_project(const Json& body);
  Json list_frames(const std::string& project) const;

  /// PNG bytes of the frame; a preview is downscaled to fit max_side.
  std::string frame_image(const std::string& frame_id, std::optional<std::size_t> max_side) const;

  Json get_labels(const std::string& frame_id, const std::string& scorer) const;
  /// Body {"scorer"?, "parts": {name: {"x","y"} | null}}; parts not named keep
  /// their stored value.
  Json put_labels(const std::string& frame_id, const Json& body);

  TrainingJob start_training(const std::string& project, const TrainRequest& request);
  TrainingJob job(const std::string& id) const;
  TrainingJob cancel_job(const std::string& id);
  /// Blocks until the job leaves queued/running/snapshotting.
  TrainingJob wait_job(const std::string& id) const;

  /// Body {"frames": directory relative to the project, "sequence"?, "instances"?};
  /// uses the latest snapshot of the project run.
  Json analyze(const std::string& project, const Json& body);
  Json refine_queue(const std::string& project, const std::string& sequence, std::size_t limit) const;
  /// Body {"sequence", "decision": "accept"|"reject", "parts"?: corrections, "scorer"?}.
  Json accept_prediction(const std::string& frame_id, const Json& body);

  std::filesystem::path audit_log_path(const std::string& project) const;

 private:
  struct JobSlot {
    TrainingJob job;
    std::atomic<bool> cancel{false};
    std::thread worker;
  };

  std::filesystem::path project_dir(const std::string& project) const;
  std::pair<std::string, std::string> split_frame_id(const std::string& frame_id) const;
  void set_status(JobSlot& slot, JobStatus status);
  Json write_labels(const std::string& project, const std::string& image, const std::string& scorer,
                    const Json& parts, const std::string& source);

  std::filesystem::path root_;
  mutable std::mutex jobs_mutex_;
  mutable std::condition_variable jobs_changed_;
  std::map<std::string, std::unique_ptr<JobSlot>> jobs_;
  std::map<std::string, std::string> active_job_;  // project -> job id
  std::uint64_t next_job_ = 1;
  mutable std::shared_mutex labels_mutex_;
  std::mutex analysis_mutex_;
};

/// HTTP+JSON front of a ProjectService.
class HttpServer {
 public:
  explicit HttpServer(ProjectService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port; throws ServiceError
  /// when binding fails.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  /// bind() plus listen() on a background thread.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace partloc::service
