use super::MappoError;
use crate::pomdp::AgentTrajectory;

/// Per-agent transition storage for one sampling phase.
///
/// Holds entries only for the agents of the current neighborhood, so a full
/// buffer has `num_envs * buffer_length * m` entries.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    capacity: usize,
    agents: Vec<usize>,
    segments: Vec<AgentTrajectory>,
    len: usize,
}

impl RolloutBuffer {
    /// `agents` is the set of agent ids the buffer accepts.
    pub fn new(num_envs: usize, buffer_length: usize, agents: &[usize]) -> Self {
        Self {
            capacity: num_envs * buffer_length * agents.len(),
            agents: agents.to_vec(),
            segments: Vec::new(),
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of stored per-agent transitions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity
    }

    pub fn agents(&self) -> &[usize] {
        &self.agents
    }

    pub fn segments(&self) -> &[AgentTrajectory] {
        &self.segments
    }

    pub fn push(&mut self, segment: AgentTrajectory) -> Result<(), MappoError> {
        if !self.agents.contains(&segment.agent_id) {
            return Err(MappoError::Contract(format!(
                "agent {} is not in the buffer's neighborhood {:?}",
                segment.agent_id, self.agents
            )));
        }
        if self.len + segment.len() > self.capacity {
            return Err(MappoError::Contract(format!(
                "buffer overflow: {} + {} > {}",
                self.len,
                segment.len(),
                self.capacity
            )));
        }
        self.len += segment.len();
        self.segments.push(segment);
        Ok(())
    }

    pub fn extend(&mut self, segments: impl IntoIterator<Item = AgentTrajectory>) -> Result<(), MappoError> {
        segments.into_iter().try_for_each(|s| self.push(s))
    }

    /// Segments of a single agent; their timesteps cover every sampled team
    /// step exactly once, since all agents share rewards and global states.
    pub fn team_view(&self) -> impl Iterator<Item = &AgentTrajectory> {
        let lead = self.agents.first().copied();
        self.segments.iter().filter(move |s| Some(s.agent_id) == lead)
    }

    pub fn clear(&mut self) {
        self.segments.clear();
        self.len = 0;
    }

    /// Re-targets an empty buffer at a new neighborhood.
    pub fn reset_for(&mut self, num_envs: usize, buffer_length: usize, agents: &[usize]) {
        *self = Self::new(num_envs, buffer_length, agents);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{decompose, testing::random_trajectory, DecPomdpSpec};

    #[test]
    fn accepts_only_neighborhood_agents_and_tracks_capacity() {
        let spec = DecPomdpSpec::new(3, 2, 4, 3, 0.9, 10).unwrap();
        let mut traj = random_trajectory(&spec, 4, 0);
        traj.transitions[3].done = false;
        let parts = decompose(&traj, &spec).unwrap();
        let mut buf = RolloutBuffer::new(1, 4, &[0, 2]);
        assert_eq!(buf.capacity(), 8);
        assert!(buf.push(parts[1].clone()).is_err());
        buf.push(parts[0].clone()).unwrap();
        buf.push(parts[2].clone()).unwrap();
        assert!(buf.is_full());
        assert_eq!(buf.team_view().count(), 1);
        assert!(buf.push(parts[0].clone()).is_err());
        buf.clear();
        assert!(buf.is_empty());
    }
}
