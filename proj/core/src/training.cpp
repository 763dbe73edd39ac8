namespace sphere_ssm {}
