// placeholder during core bring-up
