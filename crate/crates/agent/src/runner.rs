//! Pluggable runners that start a cached client image.

use std::path::{Path, PathBuf};

use gridhall_core::launcher::LaunchDescriptor;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};

pub const IMAGE_PLACEHOLDER: &str = "{image}";

#[derive(Debug, Clone)]
pub enum Runner {
    /// Writes `<dir>/<descriptor_id>.run` and succeeds.
    Noop { marker_dir: PathBuf },
    /// Runs an argv template; `{image}`, `{descriptor_id}`,
    /// `{application_id}` and `{param:NAME}` are substituted per argument,
    /// never through a shell.
    Process { template: Vec<String> },
}

/// Contents of a noop run marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMarker {
    pub descriptor_id: String,
    pub application_id: String,
    pub image: PathBuf,
    pub launch_params: std::collections::BTreeMap<String, String>,
}

impl Runner {
    pub fn noop(marker_dir: impl Into<PathBuf>) -> Self {
        Runner::Noop {
            marker_dir: marker_dir.into(),
        }
    }

    pub fn process(template: &str) -> Result<Self> {
        let argv =
            shell_words::split(template).map_err(|e| AgentError::Config(format!("command template: {e}")))?;
        if argv.is_empty() {
            return Err(AgentError::Config("command template is empty".into()));
        }
        if !argv.iter().any(|a| a.contains(IMAGE_PLACEHOLDER)) {
            return Err(AgentError::Config(format!(
                "command template must reference {IMAGE_PLACEHOLDER}"
            )));
        }
        Ok(Runner::Process { template: argv })
    }

    pub fn argv(template: &[String], image: &Path, d: &LaunchDescriptor) -> Vec<String> {
        template
            .iter()
            .map(|arg| {
                let mut out = arg
                    .replace(IMAGE_PLACEHOLDER, &image.to_string_lossy())
                    .replace("{descriptor_id}", &d.descriptor_id.to_string())
                    .replace("{application_id}", &d.application_id.to_string());
                while let Some(start) = out.find("{param:") {
                    let Some(len) = out[start..].find('}') else { break };
                    let name = &out[start + 7..start + len];
                    let value = d.launch_params.get(name).cloned().unwrap_or_default();
                    out.replace_range(start..=start + len, &value);
                }
                out
            })
            .collect()
    }

    pub async fn run(&self, image: &Path, d: &LaunchDescriptor) -> Result<()> {
        match self {
            Runner::Noop { marker_dir } => {
                let marker = RunMarker {
                    descriptor_id: d.descriptor_id.to_string(),
                    application_id: d.application_id.to_string(),
                    image: image.to_path_buf(),
                    launch_params: d.launch_params.clone(),
                };
                tokio::fs::create_dir_all(marker_dir)
                    .await
                    .map_err(|e| AgentError::RunnerFailed(e.to_string()))?;
                tokio::fs::write(
                    marker_dir.join(format!("{}.run", d.descriptor_id)),
                    serde_json::to_vec_pretty(&marker).expect("marker serializes"),
                )
                .await
                .map_err(|e| AgentError::RunnerFailed(e.to_string()))
            }
            Runner::Process { template } => {
                let argv = Self::argv(template, image, d);
                let status = tokio::process::Command::new(&argv[0])
                    .args(&argv[1..])
                    .status()
                    .await
                    .map_err(|e| AgentError::RunnerFailed(format!("{}: {e}", argv[0])))?;
                if status.success() {
                    Ok(())
                } else {
                    Err(AgentError::RunnerFailed(format!(
                        "{} exited with {status}",
                        argv[0]
                    )))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;
    use gridhall_core::ids::{AppId, DescriptorId, UserId};

    fn descriptor() -> LaunchDescriptor {
        LaunchDescriptor {
            descriptor_id: DescriptorId::new(),
            application_id: AppId::new(),
            image_download_url: "http://x/images/d".into(),
            blob_digest: "d".into(),
            size_bytes: 1,
            launch_params: [("tag_id".to_string(), "red".to_string())].into(),
            issued_to: UserId::new(),
            issued_at: Utc::now(),
            expires_at: Utc::now(),
            signature: String::new(),
        }
    }

    #[test]
    fn template_must_name_the_image() {
        assert!(matches!(
            Runner::process("vbox start"),
            Err(AgentError::Config(_))
        ));
        assert!(matches!(Runner::process(""), Err(AgentError::Config(_))));
        assert!(matches!(
            Runner::process("vbox 'unterminated"),
            Err(AgentError::Config(_))
        ));
        assert!(Runner::process("vbox --disk={image}").is_ok());
    }

    #[test]
    fn placeholders_are_substituted_per_argument() {
        let d = descriptor();
        let Runner::Process { template } =
            Runner::process("run '{image}' --tag {param:tag_id} --x={param:missing} {application_id}")
                .unwrap()
        else {
            unreachable!()
        };
        let argv = Runner::argv(&template, Path::new("/c/my image"), &d);
        assert_eq!(
            argv,
            vec![
                "run".to_string(),
                "/c/my image".into(),
                "--tag".into(),
                "red".into(),
                "--x=".into(),
                d.application_id.to_string()
            ]
        );
    }

    #[tokio::test]
    async fn process_exit_status_decides_success() {
        let d = descriptor();
        let ok = Runner::process("test -n {image}").unwrap();
        ok.run(Path::new("/img"), &d).await.unwrap();
        let bad = Runner::process("test -z {image}").unwrap();
        assert!(matches!(
            bad.run(Path::new("/img"), &d).await,
            Err(AgentError::RunnerFailed(_))
        ));
        let missing = Runner::process("/nonexistent/runner {image}").unwrap();
        assert!(matches!(
            missing.run(Path::new("/img"), &d).await,
            Err(AgentError::RunnerFailed(_))
        ));
    }
}
